use twin_core::{CloudState, EnergyReading, HypervisorId, InstanceId};

use super::{
    Accepted, AuthToken, CloudClient, CloudError, Credentials, HostAction, HostPower, MeteringConfig,
    MeteringSource, VmAction,
};

/// A client plus credentials and the cached token.
///
/// The token is reused until it expires. A call rejected with 401 clears it,
/// authenticates again and repeats the call once.
#[derive(Debug)]
pub struct CloudSession {
    client: CloudClient,
    creds: Credentials,
    token: Option<AuthToken>,
    authentications: u64,
}

impl CloudSession {
    pub fn new(client: CloudClient, creds: Credentials) -> Self {
        Self { client, creds, token: None, authentications: 0 }
    }

    pub fn client(&self) -> &CloudClient {
        &self.client
    }

    /// Successful authentications so far.
    pub fn authentications(&self) -> u64 {
        self.authentications
    }

    fn ensure_token(&mut self) -> Result<(), CloudError> {
        let now = self.client.clock().now();
        if self.token.as_ref().is_some_and(|t| !t.is_expired(now)) {
            return Ok(());
        }
        self.token = None;
        let token = self.client.authenticate(&self.creds)?;
        self.authentications += 1;
        tracing::debug!(expires_at = %token.expires_at, "authenticated");
        self.token = Some(token);
        Ok(())
    }

    fn with_token<T>(
        &mut self,
        f: impl Fn(&CloudClient, &AuthToken, &Credentials) -> Result<T, CloudError>,
    ) -> Result<T, CloudError> {
        self.ensure_token()?;
        let first = f(&self.client, self.token.as_ref().expect("token ensured"), &self.creds);
        match first {
            Err(CloudError::TokenExpired) => {
                tracing::info!("token rejected, authenticating again");
                self.token = None;
                self.ensure_token()?;
                f(&self.client, self.token.as_ref().expect("token ensured"), &self.creds)
            }
            other => other,
        }
    }

    pub fn authenticate(&mut self) -> Result<AuthToken, CloudError> {
        self.token = None;
        self.ensure_token()?;
        Ok(self.token.clone().expect("token ensured"))
    }

    pub fn fetch_inventory(&mut self, poll_seq: u64) -> Result<CloudState, CloudError> {
        self.with_token(|c, t, creds| c.fetch_inventory(t, creds, poll_seq))
    }

    pub fn send_vm_action(&mut self, instance: &InstanceId, action: &VmAction) -> Result<Accepted, CloudError> {
        self.with_token(|c, t, _| c.send_vm_action(t, instance, action))
    }

    pub fn send_host_action(
        &mut self,
        power: &HostPower,
        state: &CloudState,
        host: &HypervisorId,
        action: HostAction,
    ) -> Result<Accepted, CloudError> {
        self.with_token(|c, t, _| power.send(c, t, state, host, action))
    }

    pub fn fetch_metering(
        &mut self,
        config: &MeteringConfig,
        state: &CloudState,
    ) -> Result<Vec<EnergyReading>, CloudError> {
        if config.source == Some(MeteringSource::Catalog) {
            self.with_token(|c, t, _| c.fetch_metering(config, Some(t), state))
        } else {
            self.client.fetch_metering(config, None, state)
        }
    }
}
