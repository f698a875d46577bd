use super::{AblationMode, AdaptState, Freeze, LossKind, Scaler};
use crate::decomposition::DecompConfig;
use crate::error::{Error, Result};
use crate::io::checkpoint::{format_f64, Checkpoint};
use crate::network::{Activation, CorrectionNet, NetSpec};
use crate::optimizer::{AdamState, Optimizer};
use crate::scalar::Scalar;
use crate::tensor::{NodeVector, Shape};

pub const STATE_KIND: &str = "adapt-state";

fn push_net<S: Scalar>(ck: &mut Checkpoint, prefix: &str, net: &CorrectionNet<S>) {
    let spec = net.spec();
    let (d, h) = (spec.d_in, spec.d_hidden);
    let f = |s: &[S]| s.iter().map(|v| v.as_f64()).collect::<Vec<_>>();
    ck.push_array(&format!("{prefix}.w1"), &[h, d], f(net.w1()));
    ck.push_array(&format!("{prefix}.b1"), &[h], f(net.b1()));
    ck.push_array(&format!("{prefix}.ln_gain"), &[h], f(net.ln_gain()));
    ck.push_array(&format!("{prefix}.ln_bias"), &[h], f(net.ln_bias()));
    ck.push_array(&format!("{prefix}.w2"), &[d, h], f(net.w2()));
    ck.push_array(&format!("{prefix}.b2"), &[d], f(net.b2()));
}

fn read_net<S: Scalar>(ck: &Checkpoint, prefix: &str, spec: NetSpec) -> Result<CorrectionNet<S>> {
    let (d, h) = (spec.d_in, spec.d_hidden);
    let mut values = Vec::with_capacity(spec.param_count());
    for (part, dims) in [
        ("w1", vec![h, d]),
        ("b1", vec![h]),
        ("ln_gain", vec![h]),
        ("ln_bias", vec![h]),
        ("w2", vec![d, h]),
        ("b2", vec![d]),
    ] {
        let arr = ck.array_with_dims(&format!("{prefix}.{part}"), &dims)?;
        values.extend(arr.iter().map(|&v| S::lit(v)));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::contract(format!("net `{prefix}` has non-finite parameters")));
    }
    CorrectionNet::from_params(spec, values)
}

fn lit_vec<S: Scalar>(v: &[f64]) -> Vec<S> {
    v.iter().map(|&x| S::lit(x)).collect()
}

impl<S: Scalar> AdaptState<S> {
    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new(STATE_KIND);
        let spec = self.g_s.spec();
        ck.push_meta("scalar", S::NAME);
        ck.push_meta("nodes", self.shape.n_nodes);
        ck.push_meta("horizon", self.shape.n_steps);
        ck.push_meta("channels", self.shape.n_channels);
        ck.push_meta("mode", self.mode.name());
        ck.push_meta("kernel", self.decomp.kernel());
        ck.push_meta("loss", self.loss.name());
        ck.push_meta("d_hidden", spec.d_hidden);
        ck.push_meta("activation", spec.activation.name());
        ck.push_float("layer_norm_eps", self.g_s.eps().as_f64());
        ck.push_float("scaler_mean", self.scaler.mean.as_f64());
        ck.push_float("scaler_std", self.scaler.std.as_f64());
        ck.push_meta("clip", self.clip.map_or("off".to_string(), |c| format_f64(c.as_f64())));
        ck.push_meta("freeze", self.freeze.describe());
        ck.push_meta("entries_seen", self.entries_seen);
        ck.push_meta("optimizer", self.opt.kind().name());
        ck.push_float("lr", self.opt.lr().as_f64());
        ck.push_meta("steps", self.opt.step_count());
        if let Optimizer::Adam(a) = &self.opt {
            ck.push_float("beta1", a.beta1.as_f64());
            ck.push_float("beta2", a.beta2.as_f64());
            ck.push_float("adam_eps", a.eps.as_f64());
        }
        push_net(&mut ck, "g_s", &self.g_s);
        push_net(&mut ck, "g_t", &self.g_t);
        let n = self.shape.n_nodes;
        ck.push_array("lambda_s", &[n], self.lambda_s.as_slice().iter().map(|v| v.as_f64()));
        ck.push_array("lambda_t", &[n], self.lambda_t.as_slice().iter().map(|v| v.as_f64()));
        if let Optimizer::Adam(a) = &self.opt {
            let p = self.param_count();
            ck.push_array("adam.m", &[p], a.m().iter().map(|v| v.as_f64()));
            ck.push_array("adam.v", &[p], a.v().iter().map(|v| v.as_f64()));
        }
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        ck.expect_kind(STATE_KIND)?;
        let scalar = ck.meta("scalar")?;
        if scalar != S::NAME {
            return Err(Error::config(format!(
                "checkpoint holds {scalar} parameters, expected {}",
                S::NAME
            )));
        }
        let shape = Shape::new(ck.meta_as("nodes")?, ck.meta_as("horizon")?, ck.meta_as("channels")?)?;
        let bad = |what: &str, v: &str| Error::config(format!("checkpoint has unknown {what} `{v}`"));
        let mode_name = ck.meta("mode")?;
        let mode = AblationMode::from_name(mode_name).ok_or_else(|| bad("mode", mode_name))?;
        let decomp = DecompConfig::new(ck.meta_as("kernel")?)?;
        let loss_name = ck.meta("loss")?;
        let loss = LossKind::from_name(loss_name).ok_or_else(|| bad("loss", loss_name))?;
        let act_name = ck.meta("activation")?;
        let activation = Activation::from_name(act_name).ok_or_else(|| bad("activation", act_name))?;
        let spec = NetSpec::new(shape.node_len(), ck.meta_as("d_hidden")?)?.with_activation(activation);
        let eps: f64 = ck.meta_as("layer_norm_eps")?;
        let scaler = Scaler::new(S::lit(ck.meta_as("scaler_mean")?), S::lit(ck.meta_as("scaler_std")?))?;
        let clip = match ck.meta("clip")? {
            "off" => None,
            _ => Some(S::lit(ck.meta_as::<f64>("clip")?)),
        };
        let freeze = Freeze::parse(ck.meta("freeze")?)?;
        let entries_seen: u64 = ck.meta_as("entries_seen")?;
        let lr = S::lit(ck.meta_as("lr")?);
        let steps: u64 = ck.meta_as("steps")?;

        let mut g_s = read_net::<S>(ck, "g_s", spec)?;
        let mut g_t = read_net::<S>(ck, "g_t", spec)?;
        if eps != crate::network::LAYER_NORM_EPS {
            return Err(Error::config(format!("unsupported layer norm eps {eps}")));
        }
        // Restamp so no tape from another state can be replayed against these.
        g_s.params_mut();
        g_t.params_mut();
        let n = shape.n_nodes;
        let lambda_s = NodeVector::new(lit_vec(ck.array_with_dims("lambda_s", &[n])?))?;
        let lambda_t = NodeVector::new(lit_vec(ck.array_with_dims("lambda_t", &[n])?))?;
        let p = 2 * spec.param_count() + 2 * n;
        let opt = match ck.meta("optimizer")? {
            "adam" => Optimizer::Adam(AdamState::from_parts(
                lr,
                S::lit(ck.meta_as("beta1")?),
                S::lit(ck.meta_as("beta2")?),
                S::lit(ck.meta_as("adam_eps")?),
                lit_vec(ck.array_with_dims("adam.m", &[p])?),
                lit_vec(ck.array_with_dims("adam.v", &[p])?),
                steps,
            )?),
            "sgd" => Optimizer::Sgd { lr, steps },
            other => return Err(bad("optimizer", other)),
        };
        Ok(Self {
            shape,
            mode,
            decomp,
            loss,
            scaler,
            clip,
            freeze,
            g_s,
            g_t,
            lambda_s,
            lambda_t,
            opt,
            entries_seen,
        })
    }
}
