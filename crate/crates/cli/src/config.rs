//! Experiment configuration: plain `key = value` lines, optionally grouped
//! under `[section]` headers or written with dotted prefixes
//! (`task.clearance = 0.002`). `#` starts a comment. Values are numbers,
//! `true`/`false`, bare words, or bracketed number lists.
//!
//! Every key has a default taken from the selected profile; unknown keys,
//! malformed values and violated constraints are reported with the line
//! number they come from.

use std::collections::BTreeMap;
use std::f64::consts::FRAC_PI_2;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use bimanual::control::{critical_damping, ControllerKind, GainSpec};
use bimanual::dynamics::{ArmModel, Link, Pose2};
use bimanual::env::{ContactParams, EnvConfig, GoalSpec, PegHoleGeometry, GRIP_OFFSET};
use bimanual::eval::{DisturbanceConfig, Profile, StopRule};
use bimanual::rl::{SacConfig, TrainConfig};
use bimanual::{Error, Result};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq)]
pub struct TaskSection {
    pub clearance: f64,
    pub delta: f64,
    pub angle_weight: f64,
    pub peg_width: f64,
    pub peg_length: f64,
    pub hole_depth: f64,
    pub wall_thickness: f64,
    pub bottom_thickness: f64,
    /// Distance from the end-effector to the part centers along its axis.
    pub grip_offset: f64,
    /// Defaults to the full hole depth.
    pub insertion_depth: Option<f64>,
    pub init_offset_fraction: f64,
    pub max_steps: usize,
    pub substeps: usize,
    pub dt: f64,
    pub peg_arm: usize,
    pub max_mount_offset: f64,
    pub contact: ContactParams,
    pub q_init: [Vec<f64>; 2],
}

/// Link parameters shared by both arms. Per-joint entries given as a single
/// value apply to every joint.
#[derive(Debug, Clone, PartialEq)]
pub struct ArmSection {
    pub link_lengths: Vec<f64>,
    pub link_masses: Vec<f64>,
    pub friction: Vec<f64>,
    pub armature: Vec<f64>,
    pub joint_lower: Vec<f64>,
    pub joint_upper: Vec<f64>,
    pub torque_limits: Vec<f64>,
    pub gravity: [f64; 2],
    /// Distance between the two arm bases (m).
    pub base_separation: f64,
}

/// Gains shared by both arms; unset damping is critical for the stiffness.
#[derive(Debug, Clone, PartialEq)]
pub struct GainSection {
    pub joint_kp: Vec<f64>,
    pub joint_kv: Option<Vec<f64>>,
    pub cart_kp: [f64; 3],
    pub cart_kv: Option<[f64; 3]>,
    pub var_kp_min: [f64; 3],
    pub var_kp_max: [f64; 3],
    pub null_kp: f64,
    pub null_kv: Option<f64>,
    pub dx_max: [f64; 3],
    pub dq_max: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalSection {
    pub cycles: usize,
    /// First episode seed of every evaluation protocol.
    pub seed: u64,
    pub disturbance: DisturbanceConfig,
    pub offsets: Vec<f64>,
    pub offset_samples: usize,
    /// q_des departure that counts as a reaction in traces (rad).
    pub trace_tolerance: f64,
    /// Disturbance wrench `(fx, fy, tz)` for trace export.
    pub trace_wrench: [f64; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub profile: Profile,
    pub long_run: bool,
    pub action_space: ControllerKind,
    pub epochs: usize,
    pub seeds: Vec<u64>,
    pub out_dir: PathBuf,
    pub checkpoint_every: usize,
    pub stop: Option<StopRule>,
    pub task: TaskSection,
    pub arm: ArmSection,
    pub gains: GainSection,
    pub sac: SacConfig,
    pub train: TrainConfig,
    pub eval: EvalSection,
}

/// Uniform per-joint values collapse to one entry so they follow the link count.
fn compress(v: Vec<f64>) -> Vec<f64> {
    if v.windows(2).all(|w| w[0] == w[1]) {
        v.into_iter().take(1).collect()
    } else {
        v
    }
}

fn broadcast(v: &[f64], n: usize) -> Vec<f64> {
    if v.len() == 1 {
        vec![v[0]; n]
    } else {
        v.to_vec()
    }
}

impl ExperimentConfig {
    /// All documented defaults of `profile`.
    pub fn defaults(profile: Profile) -> Self {
        let env = profile.env_config(ControllerKind::JointPosition);
        let g = &env.geometry;
        let arm = &env.arms[0];
        let col = |f: fn(&Link) -> f64| compress(arm.links.iter().map(f).collect());
        let gains = &env.gains[0];
        let (start, end) = profile.disturbance_window();
        let train = profile.train_config();
        Self {
            profile,
            long_run: profile == Profile::Full,
            action_space: ControllerKind::JointPosition,
            epochs: profile.epochs(),
            seeds: vec![0, 1, 2, 3],
            out_dir: PathBuf::from("runs"),
            checkpoint_every: 50,
            stop: (profile == Profile::Scaled).then(StopRule::default),
            task: TaskSection {
                clearance: g.clearance,
                delta: env.goal.delta,
                angle_weight: env.goal.angle_weight,
                peg_width: g.peg_width,
                peg_length: g.peg_length,
                hole_depth: g.hole_depth,
                wall_thickness: g.wall_thickness,
                bottom_thickness: g.bottom_thickness,
                grip_offset: GRIP_OFFSET,
                insertion_depth: None,
                init_offset_fraction: train.init_offset_fraction,
                max_steps: env.max_steps,
                substeps: env.substeps,
                dt: env.dt,
                peg_arm: env.peg_arm,
                max_mount_offset: env.max_mount_offset,
                contact: env.contact.clone(),
                q_init: env.q_init.clone(),
            },
            arm: ArmSection {
                link_lengths: arm.links.iter().map(|l| l.length).collect(),
                link_masses: arm.links.iter().map(|l| l.mass).collect(),
                friction: col(|l| l.friction),
                armature: col(|l| l.armature),
                joint_lower: col(|l| l.lower),
                joint_upper: col(|l| l.upper),
                torque_limits: col(|l| l.torque_limit),
                gravity: arm.gravity,
                base_separation: env.arms[1].base.x - env.arms[0].base.x,
            },
            gains: GainSection {
                joint_kp: compress(gains.joint_kp.clone()),
                joint_kv: None,
                cart_kp: gains.cart_kp,
                cart_kv: None,
                var_kp_min: gains.var_kp_min,
                var_kp_max: gains.var_kp_max,
                null_kp: gains.null_kp,
                null_kv: None,
                dx_max: gains.dx_max,
                dq_max: compress(gains.dq_max.clone()),
            },
            sac: profile.sac_config(),
            train,
            eval: EvalSection {
                cycles: 10,
                seed: 1_000_000,
                disturbance: DisturbanceConfig { start, end, cycles: profile.disturbance_cycles(), ..DisturbanceConfig::default() },
                offsets: profile.mount_offsets(),
                offset_samples: 50,
                trace_tolerance: 1e-3,
                trace_wrench: [10.0, 0.0, 0.0],
            },
        }
    }

    pub fn dof(&self) -> usize {
        self.arm.link_lengths.len()
    }

    fn arm_model(&self, base: Pose2) -> Result<ArmModel> {
        let n = self.dof();
        let a = &self.arm;
        let per_joint = |v: &[f64]| broadcast(v, n);
        let (fr, ar, lo, up, tl) = (
            per_joint(&a.friction),
            per_joint(&a.armature),
            per_joint(&a.joint_lower),
            per_joint(&a.joint_upper),
            per_joint(&a.torque_limits),
        );
        let links = (0..n)
            .map(|i| Link {
                friction: fr[i],
                armature: ar[i],
                lower: lo[i],
                upper: up[i],
                torque_limit: tl[i],
                ..Link::rod(a.link_lengths[i], a.link_masses[i])
            })
            .collect();
        ArmModel::new(links, base, a.gravity)
    }

    fn gain_spec(&self) -> GainSpec {
        let n = self.dof();
        let g = &self.gains;
        let joint_kp = broadcast(&g.joint_kp, n);
        GainSpec {
            joint_kv: g.joint_kv.as_ref().map_or_else(|| joint_kp.iter().map(|k| critical_damping(*k)).collect(), |v| broadcast(v, n)),
            joint_kp,
            cart_kp: g.cart_kp,
            cart_kv: g.cart_kv.unwrap_or(g.cart_kp.map(critical_damping)),
            var_kp_min: g.var_kp_min,
            var_kp_max: g.var_kp_max,
            null_kp: g.null_kp,
            null_kv: g.null_kv.unwrap_or(critical_damping(g.null_kp)),
            dx_max: g.dx_max,
            dq_max: broadcast(&g.dq_max, n),
        }
    }

    /// Environment described by this configuration.
    pub fn env_config(&self) -> Result<EnvConfig> {
        let t = &self.task;
        let n = self.dof();
        let a = &self.arm;
        for (name, v) in [
            ("link_masses", &a.link_masses),
            ("friction", &a.friction),
            ("armature", &a.armature),
            ("joint_lower", &a.joint_lower),
            ("joint_upper", &a.joint_upper),
            ("torque_limits", &a.torque_limits),
        ] {
            if v.len() != n && v.len() != 1 {
                return Err(Error::Contract(format!("arm.{name} has {} entries for {n} links", v.len())));
            }
        }
        for (name, v) in [("joint_kp", Some(&self.gains.joint_kp)), ("joint_kv", self.gains.joint_kv.as_ref()), ("dq_max", Some(&self.gains.dq_max))] {
            if let Some(v) = v.filter(|v| v.len() != n && v.len() != 1) {
                return Err(Error::Contract(format!("gains.{name} has {} entries for {n} joints", v.len())));
            }
        }
        let half = 0.5 * a.base_separation;
        let arms = [self.arm_model(Pose2::new(-half, 0.0, FRAC_PI_2))?, self.arm_model(Pose2::new(half, 0.0, FRAC_PI_2))?];
        let mut geometry = PegHoleGeometry::with_grip(
            t.peg_width,
            t.peg_length,
            t.clearance,
            t.hole_depth,
            t.wall_thickness,
            t.bottom_thickness,
            t.grip_offset,
        );
        if let Some(d) = t.insertion_depth {
            geometry.insertion_depth = d;
        }
        if t.peg_arm == 1 {
            geometry = geometry.mirrored();
        }
        let goal = GoalSpec { delta: t.delta, angle_weight: t.angle_weight, ..GoalSpec::for_geometry(&geometry) };
        let gains = self.gain_spec();
        let cfg = EnvConfig {
            arms,
            q_init: t.q_init.clone(),
            gains: [gains.clone(), gains],
            controller: self.action_space,
            geometry,
            goal,
            contact: t.contact.clone(),
            dt: t.dt,
            substeps: t.substeps,
            max_steps: t.max_steps,
            peg_arm: t.peg_arm,
            init_offset_fraction: t.init_offset_fraction,
            max_mount_offset: t.max_mount_offset,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig { init_offset_fraction: self.task.init_offset_fraction, ..self.train.clone() }
    }

    /// Checks every module precondition; `Err` carries the section at fault.
    fn check(&self) -> std::result::Result<(), (&'static str, Error)> {
        self.env_config().map_err(|e| ("env", e))?;
        self.sac.validate().map_err(|e| ("rl", e))?;
        self.train_config().validate().map_err(|e| ("rl", e))?;
        self.eval.disturbance.validate().map_err(|e| ("eval", e))?;
        let e = |msg: &str| Err(("eval", Error::Contract(msg.into())));
        if self.eval.cycles == 0 || self.eval.offset_samples == 0 {
            return e("eval.cycles and eval.offset_samples must be positive");
        }
        if self.eval.disturbance.end > self.task.max_steps {
            return e("disturbance window must end within the episode");
        }
        if self.eval.offsets.iter().any(|m| !(*m >= 0.0 && *m <= self.task.max_mount_offset)) {
            return e("eval.offsets must lie in [0, task.max_mount_offset]");
        }
        if !(self.eval.trace_tolerance >= 0.0) || self.eval.trace_wrench.iter().any(|v| !v.is_finite()) {
            return e("trace tolerance must be non-negative and the trace wrench finite");
        }
        if self.seeds.is_empty() {
            return Err(("top", Error::Contract("at least one seed is required".into())));
        }
        if self.checkpoint_every == 0 {
            return Err(("top", Error::Contract("checkpoint_every must be positive".into())));
        }
        if let Some(s) = self.stop {
            if !(0.0..=1.0).contains(&s.threshold) || s.consecutive == 0 {
                return Err(("top", Error::Contract("stop rule needs a threshold in [0, 1] and a positive streak".into())));
            }
        }
        Ok(())
    }

    /// Resolved configuration in the input format; parsing it back yields
    /// the same configuration.
    pub fn to_text(&self) -> String {
        let list = |v: &[f64]| format!("[{}]", v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(", "));
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("profile", self.profile.name().into());
        kv("long_run", self.long_run.to_string());
        kv("action_space", self.action_space.name().into());
        kv("epochs", self.epochs.to_string());
        kv("seeds", format!("[{}]", self.seeds.iter().map(u64::to_string).collect::<Vec<_>>().join(", ")));
        kv("out_dir", self.out_dir.display().to_string());
        kv("checkpoint_every", self.checkpoint_every.to_string());
        kv("stop.enabled", self.stop.is_some().to_string());
        let stop = self.stop.unwrap_or_default();
        kv("stop.threshold", stop.threshold.to_string());
        kv("stop.consecutive", stop.consecutive.to_string());

        let t = &self.task;
        kv("task.clearance", t.clearance.to_string());
        kv("task.delta", t.delta.to_string());
        kv("task.angle_weight", t.angle_weight.to_string());
        kv("task.peg_width", t.peg_width.to_string());
        kv("task.peg_length", t.peg_length.to_string());
        kv("task.hole_depth", t.hole_depth.to_string());
        kv("task.wall_thickness", t.wall_thickness.to_string());
        kv("task.bottom_thickness", t.bottom_thickness.to_string());
        kv("task.grip_offset", t.grip_offset.to_string());
        kv("task.insertion_depth", t.insertion_depth.unwrap_or(t.hole_depth).to_string());
        kv("task.init_offset_fraction", t.init_offset_fraction.to_string());
        kv("task.max_steps", t.max_steps.to_string());
        kv("task.substeps", t.substeps.to_string());
        kv("task.dt", t.dt.to_string());
        kv("task.peg_arm", t.peg_arm.to_string());
        kv("task.max_mount_offset", t.max_mount_offset.to_string());
        kv("task.contact_stiffness", t.contact.stiffness.to_string());
        kv("task.contact_damping", t.contact.damping.to_string());
        kv("task.friction", t.contact.friction.to_string());
        kv("task.slip_speed", t.contact.slip_speed.to_string());
        kv("task.q_init_left", list(&t.q_init[0]));
        kv("task.q_init_right", list(&t.q_init[1]));

        let a = &self.arm;
        kv("arm.link_lengths", list(&a.link_lengths));
        kv("arm.link_masses", list(&a.link_masses));
        kv("arm.friction", list(&a.friction));
        kv("arm.armature", list(&a.armature));
        kv("arm.joint_lower", list(&a.joint_lower));
        kv("arm.joint_upper", list(&a.joint_upper));
        kv("arm.torque_limits", list(&a.torque_limits));
        kv("arm.gravity", list(&a.gravity));
        kv("arm.base_separation", a.base_separation.to_string());

        let g = self.gain_spec();
        kv("gains.joint_kp", list(&g.joint_kp));
        kv("gains.joint_kv", list(&g.joint_kv));
        kv("gains.cart_kp", list(&g.cart_kp));
        kv("gains.cart_kv", list(&g.cart_kv));
        kv("gains.var_kp_min", list(&g.var_kp_min));
        kv("gains.var_kp_max", list(&g.var_kp_max));
        kv("gains.null_kp", g.null_kp.to_string());
        kv("gains.null_kv", g.null_kv.to_string());
        kv("gains.dx_max", list(&g.dx_max));
        kv("gains.dq_max", list(&g.dq_max));

        let (r, tr) = (&self.sac, &self.train);
        kv("rl.hidden", r.hidden.to_string());
        kv("rl.policy_layers", r.policy_layers.to_string());
        kv("rl.q_layers", r.q_layers.to_string());
        kv("rl.lr", r.lr.to_string());
        kv("rl.gamma", r.gamma.to_string());
        kv("rl.tau", r.tau.to_string());
        kv("rl.init_alpha", r.init_alpha.to_string());
        kv("rl.auto_alpha", r.auto_alpha.to_string());
        if let Some(h) = r.target_entropy {
            kv("rl.target_entropy", h.to_string());
        }
        kv("rl.policy_output_scale", r.policy_output_scale.to_string());
        kv("rl.batch_size", tr.batch_size.to_string());
        kv("rl.buffer_capacity", tr.buffer_capacity.to_string());
        kv("rl.warmup", tr.warmup.to_string());
        kv("rl.updates_per_epoch", tr.updates_per_epoch.to_string());
        kv("rl.her_k", tr.her_k.to_string());
        kv("rl.eval_every", tr.eval_every.to_string());
        kv("rl.eval_cycles", tr.eval_cycles.to_string());
        kv("rl.eval_seed", tr.eval_seed.to_string());

        let e = &self.eval;
        let d = &e.disturbance;
        kv("eval.cycles", e.cycles.to_string());
        kv("eval.seed", e.seed.to_string());
        kv("eval.n_disturbances", d.n_disturbances.to_string());
        kv("eval.disturbance_cycles", d.cycles.to_string());
        kv("eval.max_force", d.max_force.to_string());
        kv("eval.max_torque", d.max_torque.to_string());
        kv("eval.window_start", d.start.to_string());
        kv("eval.window_end", d.end.to_string());
        kv("eval.bins", d.bins.to_string());
        kv("eval.disturbance_seed", d.seed.to_string());
        kv("eval.offsets", list(&e.offsets));
        kv("eval.offset_samples", e.offset_samples.to_string());
        kv("eval.trace_tolerance", e.trace_tolerance.to_string());
        kv("eval.trace_wrench", list(&e.trace_wrench));
        s
    }

    /// SHA-256 of the resolved configuration text. The output directory is
    /// left out: where results go does not change what they are.
    pub fn hash(&self) -> String {
        let text: String = self.to_text().lines().filter(|l| !l.starts_with("out_dir =")).flat_map(|l| [l, "\n"]).collect();
        Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Value {
    Num(f64),
    Bool(bool),
    Word(String),
    List(Vec<f64>),
}

struct Entry {
    line: usize,
    key: String,
    value: Value,
}

fn parse_number(s: &str) -> Option<f64> {
    // Typeset minus signs are accepted alongside ASCII ones.
    s.trim().replace('\u{2212}', "-").parse::<f64>().ok()
}

fn parse_value(raw: &str, line: usize) -> Result<Value> {
    let raw = raw.trim();
    if let Some(inner) = raw.strip_prefix('[') {
        let inner = inner
            .strip_suffix(']')
            .ok_or_else(|| Error::Config { line, msg: "list is missing its closing ']'".into() })?;
        if inner.trim().is_empty() {
            return Ok(Value::List(vec![]));
        }
        return inner
            .split(',')
            .map(|item| {
                parse_number(item).ok_or_else(|| Error::Config { line, msg: format!("'{}' is not a number", item.trim()) })
            })
            .collect::<Result<Vec<_>>>()
            .map(Value::List);
    }
    if raw.is_empty() {
        return Err(Error::Config { line, msg: "missing value".into() });
    }
    Ok(match raw {
        "true" => Value::Bool(true),
        "false" => Value::Bool(false),
        _ => match parse_number(raw) {
            Some(x) => Value::Num(x),
            None => Value::Word(raw.trim_matches('"').to_string()),
        },
    })
}

fn parse_entries(text: &str) -> Result<Vec<Entry>> {
    let mut section = String::new();
    let mut seen: BTreeMap<String, usize> = BTreeMap::new();
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        if let Some(name) = content.strip_prefix('[').and_then(|c| c.strip_suffix(']')) {
            let name = name.trim();
            if name.is_empty() || name.contains(char::is_whitespace) {
                return Err(Error::Config { line, msg: format!("invalid section header '{content}'") });
            }
            section = name.to_string();
            continue;
        }
        let (k, v) = content
            .split_once('=')
            .ok_or_else(|| Error::Config { line, msg: format!("expected 'key = value', found '{content}'") })?;
        let k = k.trim();
        if k.is_empty() {
            return Err(Error::Config { line, msg: "empty key".into() });
        }
        let key = if section.is_empty() { k.to_string() } else { format!("{section}.{k}") };
        if let Some(first) = seen.insert(key.clone(), line) {
            return Err(Error::Config { line, msg: format!("'{key}' already set on line {first}") });
        }
        out.push(Entry { line, key, value: parse_value(v, line)? });
    }
    Ok(out)
}

impl Entry {
    fn err(&self, msg: impl Into<String>) -> Error {
        Error::Config { line: self.line, msg: format!("{}: {}", self.key, msg.into()) }
    }

    fn num(&self) -> Result<f64> {
        match self.value {
            Value::Num(x) if x.is_finite() => Ok(x),
            _ => Err(self.err("expected a finite number")),
        }
    }

    fn count(&self) -> Result<usize> {
        match self.value {
            Value::Num(x) if x >= 0.0 && x.fract() == 0.0 && x <= usize::MAX as f64 => Ok(x as usize),
            _ => Err(self.err("expected a non-negative integer")),
        }
    }

    fn seed(&self) -> Result<u64> {
        self.count().map(|n| n as u64)
    }

    fn flag(&self) -> Result<bool> {
        match self.value {
            Value::Bool(b) => Ok(b),
            _ => Err(self.err("expected true or false")),
        }
    }

    fn word(&self) -> Result<&str> {
        match &self.value {
            Value::Word(w) => Ok(w),
            _ => Err(self.err("expected a word")),
        }
    }

    /// A list, or a single number standing for a one-element list.
    fn list(&self) -> Result<Vec<f64>> {
        let v = match &self.value {
            Value::List(v) => v.clone(),
            Value::Num(x) => vec![*x],
            _ => return Err(self.err("expected a number list")),
        };
        if v.iter().any(|x| !x.is_finite()) {
            return Err(self.err("list entries must be finite"));
        }
        Ok(v)
    }

    fn nonempty_list(&self) -> Result<Vec<f64>> {
        let v = self.list()?;
        if v.is_empty() {
            return Err(self.err("list must not be empty"));
        }
        Ok(v)
    }

    fn triple(&self) -> Result<[f64; 3]> {
        let v = self.list()?;
        match v.as_slice() {
            [a, b, c] => Ok([*a, *b, *c]),
            [a] => Ok([*a; 3]),
            _ => Err(self.err(format!("expected 3 entries, found {}", v.len()))),
        }
    }

    fn pair(&self) -> Result<[f64; 2]> {
        match self.list()?.as_slice() {
            [a, b] => Ok([*a, *b]),
            v => Err(self.err(format!("expected 2 entries, found {}", v.len()))),
        }
    }
}

/// Optional settings that override the file (command-line flags).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub long_run: bool,
    pub seeds: Vec<u64>,
    pub out_dir: Option<PathBuf>,
}

fn apply(cfg: &mut ExperimentConfig, e: &Entry) -> Result<()> {
    match e.key.as_str() {
        "profile" | "long_run" => {}
        "action_space" => {
            cfg.action_space = ControllerKind::parse(e.word()?).ok_or_else(|| {
                e.err("expected joint_position, cartesian_impedance or variable_cartesian_impedance")
            })?
        }
        "epochs" => cfg.epochs = e.count()?,
        "seeds" => {
            let v = e.list()?;
            if v.iter().any(|s| *s < 0.0 || s.fract() != 0.0 || *s > u64::MAX as f64) {
                return Err(e.err("seeds must be non-negative integers"));
            }
            cfg.seeds = v.into_iter().map(|s| s as u64).collect();
        }
        "out_dir" => cfg.out_dir = PathBuf::from(e.word()?),
        "checkpoint_every" => cfg.checkpoint_every = e.count()?,
        "stop.enabled" => {}
        "stop.threshold" => cfg.stop.get_or_insert_with(StopRule::default).threshold = e.num()?,
        "stop.consecutive" => cfg.stop.get_or_insert_with(StopRule::default).consecutive = e.count()?,

        "task.clearance" => cfg.task.clearance = e.num()?,
        "task.delta" => cfg.task.delta = e.num()?,
        "task.angle_weight" => cfg.task.angle_weight = e.num()?,
        "task.peg_width" => cfg.task.peg_width = e.num()?,
        "task.peg_length" => cfg.task.peg_length = e.num()?,
        "task.hole_depth" => cfg.task.hole_depth = e.num()?,
        "task.wall_thickness" => cfg.task.wall_thickness = e.num()?,
        "task.bottom_thickness" => cfg.task.bottom_thickness = e.num()?,
        "task.grip_offset" => cfg.task.grip_offset = e.num()?,
        "task.insertion_depth" => cfg.task.insertion_depth = Some(e.num()?),
        "task.init_offset_fraction" => cfg.task.init_offset_fraction = e.num()?,
        "task.max_steps" => cfg.task.max_steps = e.count()?,
        "task.substeps" => cfg.task.substeps = e.count()?,
        "task.dt" => cfg.task.dt = e.num()?,
        "task.peg_arm" => cfg.task.peg_arm = e.count()?,
        "task.max_mount_offset" => cfg.task.max_mount_offset = e.num()?,
        "task.contact_stiffness" => cfg.task.contact.stiffness = e.num()?,
        "task.contact_damping" => cfg.task.contact.damping = e.num()?,
        "task.friction" => cfg.task.contact.friction = e.num()?,
        "task.slip_speed" => cfg.task.contact.slip_speed = e.num()?,
        "task.q_init" | "q_init" => {
            let q = e.nonempty_list()?;
            cfg.task.q_init = [q.clone(), q];
        }
        "task.q_init_left" => cfg.task.q_init[0] = e.nonempty_list()?,
        "task.q_init_right" => cfg.task.q_init[1] = e.nonempty_list()?,

        "arm.link_lengths" => cfg.arm.link_lengths = e.nonempty_list()?,
        "arm.link_masses" => cfg.arm.link_masses = e.nonempty_list()?,
        "arm.friction" => cfg.arm.friction = e.nonempty_list()?,
        "arm.armature" => cfg.arm.armature = e.nonempty_list()?,
        "arm.joint_lower" => cfg.arm.joint_lower = e.nonempty_list()?,
        "arm.joint_upper" => cfg.arm.joint_upper = e.nonempty_list()?,
        "arm.torque_limits" => cfg.arm.torque_limits = e.nonempty_list()?,
        "arm.gravity" => cfg.arm.gravity = e.pair()?,
        "arm.base_separation" => cfg.arm.base_separation = e.num()?,

        "gains.joint_kp" => cfg.gains.joint_kp = e.nonempty_list()?,
        "gains.joint_kv" => cfg.gains.joint_kv = Some(e.nonempty_list()?),
        "gains.cart_kp" => cfg.gains.cart_kp = e.triple()?,
        "gains.cart_kv" => cfg.gains.cart_kv = Some(e.triple()?),
        "gains.var_kp_min" => cfg.gains.var_kp_min = e.triple()?,
        "gains.var_kp_max" => cfg.gains.var_kp_max = e.triple()?,
        "gains.null_kp" => cfg.gains.null_kp = e.num()?,
        "gains.null_kv" => cfg.gains.null_kv = Some(e.num()?),
        "gains.dx_max" => cfg.gains.dx_max = e.triple()?,
        "gains.dq_max" => cfg.gains.dq_max = e.nonempty_list()?,

        "rl.hidden" => cfg.sac.hidden = e.count()?,
        "rl.policy_layers" => cfg.sac.policy_layers = e.count()?,
        "rl.q_layers" => cfg.sac.q_layers = e.count()?,
        "rl.lr" => cfg.sac.lr = e.num()?,
        "rl.gamma" => cfg.sac.gamma = e.num()?,
        "rl.tau" => cfg.sac.tau = e.num()?,
        "rl.init_alpha" => cfg.sac.init_alpha = e.num()?,
        "rl.auto_alpha" => cfg.sac.auto_alpha = e.flag()?,
        "rl.target_entropy" => cfg.sac.target_entropy = Some(e.num()?),
        "rl.policy_output_scale" => cfg.sac.policy_output_scale = e.num()?,
        "rl.batch_size" => cfg.train.batch_size = e.count()?,
        "rl.buffer_capacity" => cfg.train.buffer_capacity = e.count()?,
        "rl.warmup" => cfg.train.warmup = e.count()?,
        "rl.updates_per_epoch" => cfg.train.updates_per_epoch = e.count()?,
        "rl.her_k" => cfg.train.her_k = e.count()?,
        "rl.eval_every" => cfg.train.eval_every = e.count()?,
        "rl.eval_cycles" => cfg.train.eval_cycles = e.count()?,
        "rl.eval_seed" => cfg.train.eval_seed = e.seed()?,

        "eval.cycles" => cfg.eval.cycles = e.count()?,
        "eval.seed" => cfg.eval.seed = e.seed()?,
        "eval.n_disturbances" => cfg.eval.disturbance.n_disturbances = e.count()?,
        "eval.disturbance_cycles" => cfg.eval.disturbance.cycles = e.count()?,
        "eval.max_force" => cfg.eval.disturbance.max_force = e.num()?,
        "eval.max_torque" => cfg.eval.disturbance.max_torque = e.num()?,
        "eval.window_start" => cfg.eval.disturbance.start = e.count()?,
        "eval.window_end" => cfg.eval.disturbance.end = e.count()?,
        "eval.bins" => cfg.eval.disturbance.bins = e.count()?,
        "eval.disturbance_seed" => cfg.eval.disturbance.seed = e.seed()?,
        "eval.offsets" => cfg.eval.offsets = e.nonempty_list()?,
        "eval.offset_samples" => cfg.eval.offset_samples = e.count()?,
        "eval.trace_tolerance" => cfg.eval.trace_tolerance = e.num()?,
        "eval.trace_wrench" => cfg.eval.trace_wrench = e.triple()?,
        _ => return Err(Error::Config { line: e.line, msg: format!("unknown key '{}'", e.key) }),
    }
    Ok(())
}

/// Parses configuration text on top of the defaults of the profile it
/// selects, then validates the result.
pub fn parse_str(text: &str, overrides: &Overrides) -> Result<ExperimentConfig> {
    let entries = parse_entries(text)?;
    let find = |k: &str| entries.iter().find(|e| e.key == k);
    let long_run = overrides.long_run || find("long_run").map(Entry::flag).transpose()?.unwrap_or(false);
    let profile = match find("profile") {
        Some(e) => match e.word()? {
            "scaled" => Profile::Scaled,
            "full" => Profile::Full,
            _ => return Err(e.err("expected scaled or full")),
        },
        None => Profile::Scaled,
    };
    let profile = if long_run { Profile::Full } else { profile };
    let mut cfg = ExperimentConfig::defaults(profile);
    cfg.long_run = long_run;
    let default_stop = cfg.stop;
    for e in &entries {
        apply(&mut cfg, e)?;
    }
    let stop_enabled = match find("stop.enabled") {
        Some(e) => e.flag()?,
        None => default_stop.is_some() || entries.iter().any(|e| e.key.starts_with("stop.")),
    };
    if !stop_enabled {
        cfg.stop = None;
    }
    if !overrides.seeds.is_empty() {
        cfg.seeds = overrides.seeds.clone();
    }
    if let Some(dir) = &overrides.out_dir {
        cfg.out_dir = dir.clone();
    }
    if let Err((section, err)) = cfg.check() {
        let line = entries
            .iter()
            .rev()
            .find(|e| match section {
                "env" => ["task.", "arm.", "gains.", "q_init", "action_space"].iter().any(|p| e.key.starts_with(p)),
                "top" => !e.key.contains('.'),
                s => e.key.starts_with(&format!("{s}.")),
            })
            .map_or(0, |e| e.line);
        let msg = match err {
            Error::Contract(m) | Error::Numeric(m) => m,
            other => other.to_string(),
        };
        return Err(Error::Config { line, msg });
    }
    Ok(cfg)
}

/// Reads and parses a configuration file.
pub fn parse_config(path: &Path, overrides: &Overrides) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Config { line: 0, msg: format!("{}: {e}", path.display()) })?;
    parse_str(&text, overrides)
}
