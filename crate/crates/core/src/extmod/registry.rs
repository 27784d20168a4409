//! System-wide table of loaded modules and the patterns they contribute.

use std::collections::{BTreeMap, HashMap};
use std::path::PathBuf;
use std::time::Duration;

use super::client::{InvokeResult, ModuleClient, ModuleDescriptor, ModuleError};
use super::recommend::{recommend, Recommendation};
use super::transport::Address;
use super::wire::WireArg;
use crate::interpreter::{ActionKind, PatternError, PatternSet, Provider, SyntaxPattern};
use crate::variables::WireBlob;

pub const SCRIPTER: &str = "scripter";

#[derive(Debug, Default)]
pub struct ModuleRegistry {
    modules: BTreeMap<String, ModuleClient>,
    by_address: HashMap<String, String>,
    patterns: PatternSet,
    /// Per-call timeout override applied to every module.
    pub call_timeout: Option<Duration>,
}

#[derive(Debug, thiserror::Error)]
pub enum LoadError {
    #[error(transparent)]
    Module(#[from] ModuleError),
    #[error(transparent)]
    Pattern(#[from] PatternError),
}

fn pattern_for(module: &str, f: &super::wire::FunctionDoc) -> SyntaxPattern {
    SyntaxPattern {
        name: f.name.clone(),
        params: f.params.clone(),
        action_kind: ActionKind::ToolCall,
        documentation: f.documentation.clone(),
        provider: Provider::Module(module.to_string()),
    }
}

impl ModuleRegistry {
    pub fn new() -> Self {
        ModuleRegistry::default()
    }

    /// Patterns contributed by all loaded modules.
    pub fn patterns(&self) -> &PatternSet {
        &self.patterns
    }

    pub fn names(&self) -> Vec<String> {
        self.modules.keys().cloned().collect()
    }

    pub fn descriptor(&self, module: &str) -> Option<&ModuleDescriptor> {
        self.modules.get(module).map(ModuleClient::descriptor)
    }

    pub fn descriptors(&self) -> Vec<&ModuleDescriptor> {
        self.modules.values().map(ModuleClient::descriptor).collect()
    }

    pub fn is_loaded(&self, module: &str) -> bool {
        self.modules.contains_key(module)
    }

    /// Connects to `address` and registers its functions. Loading the same
    /// address again re-handshakes and yields the same descriptor.
    pub fn load(&mut self, address: &Address, reserved: &PatternSet) -> Result<ModuleDescriptor, LoadError> {
        let client = ModuleClient::load(address)?;
        self.install(client, reserved)
    }

    /// Registers an already connected client, replacing any module of the same name.
    pub fn install(&mut self, mut client: ModuleClient, reserved: &PatternSet) -> Result<ModuleDescriptor, LoadError> {
        let name = client.name().to_string();
        // Check the new patterns against builtins and other modules first.
        let mut others = self.patterns.clone();
        for p in self.patterns.iter() {
            if p.provider == Provider::Module(name.clone()) {
                others.remove(&p.name);
            }
        }
        let mut merged = reserved.merged(&others);
        for f in &client.descriptor().functions {
            merged.register(pattern_for(&name, f))?;
        }
        if let Some(t) = self.call_timeout {
            client.timeout = t;
        }
        if let Some(mut old) = self.modules.remove(&name) {
            self.by_address.retain(|_, m| *m != name);
            if old.descriptor().address == client.descriptor().address {
                if let Some(p) = old.take_process() {
                    client.adopt_process(p);
                }
            }
        }
        let mut patterns = others;
        for f in &client.descriptor().functions {
            patterns.register(pattern_for(&name, f))?;
        }
        self.patterns = patterns;
        let desc = client.descriptor().clone();
        self.by_address.insert(desc.address.to_string(), name.clone());
        self.modules.insert(name, client);
        Ok(desc)
    }

    /// Drops a module and its patterns, killing its process if it was spawned.
    pub fn unload(&mut self, module: &str) {
        if self.modules.remove(module).is_some() {
            self.by_address.retain(|_, m| m != module);
            let names: Vec<String> = self
                .patterns
                .iter()
                .filter(|p| p.provider == Provider::Module(module.to_string()))
                .map(|p| p.name.clone())
                .collect();
            for n in names {
                self.patterns.remove(&n);
            }
        }
    }

    pub fn provider_of(&self, function: &str) -> Option<String> {
        match &self.patterns.get(function)?.provider {
            Provider::Module(m) => Some(m.clone()),
            Provider::Builtin => None,
        }
    }

    pub fn invoke(
        &mut self,
        function: &str,
        args: BTreeMap<String, WireArg>,
        blobs: Vec<WireBlob>,
    ) -> Result<(String, InvokeResult), ModuleError> {
        let module = self.provider_of(function).ok_or_else(|| ModuleError::Remote {
            module: "(none)".into(),
            message: format!("no loaded module provides {function}"),
        })?;
        let client = self.modules.get_mut(&module).expect("patterns track loaded modules");
        let r = client.invoke(function, args, blobs, None)?;
        Ok((module, r))
    }

    /// Free-form state report of `module`, if loaded and reachable.
    pub fn state_report(&mut self, module: &str) -> Option<Result<String, ModuleError>> {
        self.modules.get_mut(module).map(ModuleClient::state_report)
    }

    /// The scripter's workspace directory, read from its state report.
    pub fn scripter_workspace(&mut self) -> Option<PathBuf> {
        let report = self.state_report(SCRIPTER)?.ok()?;
        report
            .lines()
            .find_map(|l| l.strip_prefix("workspace: "))
            .map(PathBuf::from)
    }

    /// Ranks every currently visible function against `context`.
    pub fn recommend(&self, context: &str) -> Vec<Recommendation> {
        let candidates: Vec<(&str, &super::wire::FunctionDoc)> = self
            .modules
            .values()
            .flat_map(|c| {
                let d = c.descriptor();
                d.visible().into_iter().map(move |f| (d.module_name.as_str(), f))
            })
            .collect();
        recommend(context, candidates)
    }
}
