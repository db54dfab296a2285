//! The five networks of a run and their on-disk checkpoint format.
//!
//! Checkpoints are plain text:
//!
//! ```text
//! mfbridge-checkpoint 1
//! meta <key> <value>            (any number of lines)
//! net <name> <in> <hidden> <out> <count>
//! adam <step> <lr> <beta1> <beta2> <eps>
//! params
//! <count values, one per line>
//! m
//! <count values>
//! v
//! <count values>
//! ```
//!
//! with one `net` block per network in [`NetId::ALL`] order. Numbers use
//! Rust's shortest round-trip exponent notation, so loading a checkpoint
//! restores every parameter bit for bit.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::Rng;

use super::{AdamConfig, AdamState, MlpParams, MlpShape};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &str = "mfbridge-checkpoint 1";

/// Which field a network represents.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum NetId {
    /// Forward policy `Z_θ`.
    ZTheta,
    /// Forward value `Y_θ`.
    YTheta,
    /// Backward policy `Ẑ_φ`.
    ZPhi,
    /// Backward value `Ŷ_φ`.
    YPhi,
    /// Flow-matching velocity `u_ψ`.
    UPsi,
}

impl NetId {
    pub const ALL: [NetId; 5] = [NetId::ZTheta, NetId::YTheta, NetId::ZPhi, NetId::YPhi, NetId::UPsi];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            NetId::ZTheta => "z_theta",
            NetId::YTheta => "y_theta",
            NetId::ZPhi => "z_phi",
            NetId::YPhi => "y_phi",
            NetId::UPsi => "u_psi",
        }
    }

    pub fn from_name(name: &str) -> Option<NetId> {
        NetId::ALL.into_iter().find(|id| id.name() == name)
    }

    pub fn is_value(self) -> bool {
        matches!(self, NetId::YTheta | NetId::YPhi)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NetBundle {
    nets: [MlpParams; 5],
    opts: [AdamState; 5],
    pub meta: BTreeMap<String, String>,
}

impl NetBundle {
    /// Freshly initialized networks for a `dim`-dimensional problem.
    /// `policy_opt` drives the four θ/φ networks, `fm_opt` drives `u_ψ`.
    pub fn new<R: Rng + ?Sized>(
        dim: usize,
        hidden: usize,
        policy_opt: AdamConfig,
        fm_opt: AdamConfig,
        rng: &mut R,
    ) -> Result<Self> {
        NetBundle::build(dim, hidden, policy_opt, fm_opt, |shape| MlpParams::init(shape, rng))
    }

    /// Every network identically zero.
    pub fn zeros(dim: usize, hidden: usize) -> Result<Self> {
        let cfg = AdamConfig::default();
        NetBundle::build(dim, hidden, cfg, cfg, MlpParams::zeros)
    }

    fn build(
        dim: usize,
        hidden: usize,
        policy_opt: AdamConfig,
        fm_opt: AdamConfig,
        mut make: impl FnMut(MlpShape) -> MlpParams,
    ) -> Result<Self> {
        let mut nets = Vec::with_capacity(5);
        let mut opts = Vec::with_capacity(5);
        for id in NetId::ALL {
            let out = if id.is_value() { 1 } else { dim };
            let p = make(MlpShape::new(dim + 1, hidden, out)?);
            let cfg = if id == NetId::UPsi { fm_opt } else { policy_opt };
            opts.push(AdamState::new(cfg, p.as_slice().len()));
            nets.push(p);
        }
        Ok(NetBundle {
            nets: nets.try_into().expect("five networks"),
            opts: opts.try_into().expect("five optimizers"),
            meta: BTreeMap::new(),
        })
    }

    pub fn net(&self, id: NetId) -> &MlpParams {
        &self.nets[id.index()]
    }

    pub fn net_mut(&mut self, id: NetId) -> &mut MlpParams {
        &mut self.nets[id.index()]
    }

    pub fn optimizer(&self, id: NetId) -> &AdamState {
        &self.opts[id.index()]
    }

    pub fn optimizer_mut(&mut self, id: NetId) -> &mut AdamState {
        &mut self.opts[id.index()]
    }

    /// Applies one Adam step to `id`.
    pub fn apply(&mut self, id: NetId, grad: &MlpParams) {
        let i = id.index();
        self.opts[i].step(&mut self.nets[i], grad);
    }

    pub fn set_learning_rate(&mut self, id: NetId, lr: f64) {
        self.opts[id.index()].config.lr = lr;
    }

    pub fn to_checkpoint_string(&self) -> String {
        let mut s = String::new();
        writeln!(s, "{CHECKPOINT_MAGIC}").unwrap();
        for (k, v) in &self.meta {
            writeln!(s, "meta {k} {v}").unwrap();
        }
        for id in NetId::ALL {
            let p = self.net(id);
            let o = self.optimizer(id);
            let sh = p.shape();
            writeln!(s, "net {} {} {} {} {}", id.name(), sh.in_dim, sh.hidden, sh.out_dim, sh.num_params()).unwrap();
            let c = o.config;
            writeln!(s, "adam {} {:e} {:e} {:e} {:e}", o.step, c.lr, c.beta1, c.beta2, c.eps).unwrap();
            for (label, values) in [("params", p.as_slice()), ("m", &o.m[..]), ("v", &o.v[..])] {
                writeln!(s, "{label}").unwrap();
                for v in values {
                    writeln!(s, "{v:e}").unwrap();
                }
            }
        }
        s
    }

    pub fn from_checkpoint_str(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().peekable();
        let bad = |line: usize, what: &str| Error::Checkpoint(format!("line {}: {what}", line + 1));
        match lines.next() {
            Some((_, l)) if l.trim() == CHECKPOINT_MAGIC => {}
            _ => return Err(Error::Checkpoint(format!("missing `{CHECKPOINT_MAGIC}` header"))),
        }
        let mut meta = BTreeMap::new();
        while let Some((_, l)) = lines.peek() {
            let Some(rest) = l.strip_prefix("meta ") else { break };
            let (k, v) = rest.split_once(' ').unwrap_or((rest, ""));
            meta.insert(k.to_string(), v.to_string());
            lines.next();
        }
        let mut nets = Vec::new();
        let mut opts = Vec::new();
        for id in NetId::ALL {
            let (ln, header) = lines.next().ok_or_else(|| Error::Checkpoint(format!("missing block for {}", id.name())))?;
            let f: Vec<&str> = header.split_whitespace().collect();
            if f.len() != 6 || f[0] != "net" || f[1] != id.name() {
                return Err(bad(ln, &format!("expected `net {} ...`", id.name())));
            }
            let dims: Vec<usize> = f[2..]
                .iter()
                .map(|v| v.parse().map_err(|_| bad(ln, "bad integer")))
                .collect::<Result<_>>()?;
            let shape = MlpShape::new(dims[0], dims[1], dims[2])?;
            if shape.num_params() != dims[3] {
                return Err(bad(ln, "parameter count disagrees with shape"));
            }
            let (ln, adam) = lines.next().ok_or_else(|| bad(ln, "missing adam line"))?;
            let a: Vec<&str> = adam.split_whitespace().collect();
            if a.len() != 6 || a[0] != "adam" {
                return Err(bad(ln, "expected `adam <step> <lr> <beta1> <beta2> <eps>`"));
            }
            let step: u64 = a[1].parse().map_err(|_| bad(ln, "bad step"))?;
            let num = |s: &str| s.parse::<f64>().map_err(|_| bad(ln, "bad number"));
            let config = AdamConfig {
                lr: num(a[2])?,
                beta1: num(a[3])?,
                beta2: num(a[4])?,
                eps: num(a[5])?,
            };
            let mut read_block = |label: &str| -> Result<Vec<f64>> {
                let (ln, l) = lines.next().ok_or_else(|| Error::Checkpoint(format!("missing `{label}` block")))?;
                if l.trim() != label {
                    return Err(bad(ln, &format!("expected `{label}`")));
                }
                (0..shape.num_params())
                    .map(|_| {
                        let (ln, l) = lines.next().ok_or_else(|| Error::Checkpoint("truncated values".into()))?;
                        l.trim().parse::<f64>().map_err(|_| bad(ln, "bad value"))
                    })
                    .collect()
            };
            let params = MlpParams::from_vec(shape, read_block("params")?)?;
            let m = read_block("m")?;
            let v = read_block("v")?;
            nets.push(params);
            opts.push(AdamState { config, step, m, v });
        }
        Ok(NetBundle {
            nets: nets.try_into().expect("five networks"),
            opts: opts.try_into().expect("five optimizers"),
            meta,
        })
    }

    /// Writes atomically: a temporary sibling file is renamed into place.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("ckpt.tmp");
        fs::write(&tmp, self.to_checkpoint_string()).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        NetBundle::from_checkpoint_str(&text)
    }

    /// Human-readable summary used by `inspect`.
    pub fn describe(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.meta {
            writeln!(s, "{k}: {v}").unwrap();
        }
        for id in NetId::ALL {
            let p = self.net(id);
            let sh = p.shape();
            let o = self.optimizer(id);
            writeln!(
                s,
                "{:<8} {} -> {} -> {} -> {}  params={}  adam_steps={}  lr={:e}  |w|={:.6}",
                id.name(),
                sh.in_dim,
                sh.hidden,
                sh.hidden,
                sh.out_dim,
                sh.num_params(),
                o.step,
                o.config.lr,
                p.norm()
            )
            .unwrap();
        }
        s
    }
}
