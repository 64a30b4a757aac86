use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::augment::AugmentParams;
use super::buffer::StoredTransition;
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::image::{batch_to_tensor, Image};
use crate::nets::{Bound, Group, NetConfig, ParamSet};
use crate::tensor::Tensor;

const HALF_LN_2PI: f32 = 0.918_938_5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SacHyper {
    pub gamma: f64,
    pub tau: f64,
    pub alpha_init: f64,
    pub target_entropy: f64,
    pub lr: f64,
    /// Learning rate of the log-temperature.
    pub alpha_lr: f64,
}

impl SacHyper {
    pub fn for_action_dim(action_dim: usize) -> Self {
        Self {
            gamma: 0.99,
            tau: 0.01,
            alpha_init: 0.1,
            target_entropy: -(action_dim as f64),
            lr: 1e-3,
            alpha_lr: 1e-3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, reason: &str| {
            Err(Error::Config {
                key: key.into(),
                reason: reason.into(),
            })
        };
        if !(0.0..1.0).contains(&self.gamma) {
            return bad("gamma", "must lie in [0, 1)");
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return bad("tau", "must lie in (0, 1]");
        }
        if !(self.alpha_init > 0.0) {
            return bad("alpha_init", "must be positive");
        }
        if !(self.lr > 0.0) {
            return bad("lr_rl", "must be positive");
        }
        if !(self.alpha_lr >= 0.0) {
            return bad("alpha_lr", "must be non-negative");
        }
        Ok(())
    }
}

/// A training batch in network layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub obs: Tensor,
    pub state: Tensor,
    pub action: Tensor,
    pub reward: Vec<f32>,
    pub next_obs: Tensor,
    pub next_state: Tensor,
    pub not_done: Vec<f32>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.reward.len()
    }

    pub fn is_empty(&self) -> bool {
        self.reward.is_empty()
    }

    /// Decodes stored transitions. With `max_shift` set, each transition gets
    /// one augmentation draw applied to both its current and next view.
    pub fn from_stored(
        items: &[&StoredTransition],
        image_size: usize,
        rng: &mut impl Rng,
        max_shift: Option<i32>,
    ) -> Result<Self> {
        if items.is_empty() {
            return Err(Error::Precondition("empty batch".into()));
        }
        let mut obs = Vec::with_capacity(items.len());
        let mut next = Vec::with_capacity(items.len());
        for it in items {
            let (o, n) = (it.image(&it.static_view, image_size), it.image(&it.next_static_view, image_size));
            match max_shift {
                Some(s) => {
                    let p = AugmentParams::sample(rng, s);
                    obs.push(p.apply(&o));
                    next.push(p.apply(&n));
                }
                None => {
                    obs.push(o);
                    next.push(n);
                }
            }
        }
        let rows = |f: fn(&StoredTransition) -> &[f32]| -> Result<Tensor> {
            let width = f(items[0]).len();
            let data: Vec<f32> = items.iter().flat_map(|it| f(it).iter().copied()).collect();
            Tensor::from_vec(&[items.len(), width], data)
        };
        let obs: Vec<&Image> = obs.iter().collect();
        let next: Vec<&Image> = next.iter().collect();
        Ok(Self {
            obs: batch_to_tensor(&obs)?,
            state: rows(|it| &it.state)?,
            action: rows(|it| &it.action)?,
            reward: items.iter().map(|it| it.reward).collect(),
            next_obs: batch_to_tensor(&next)?,
            next_state: rows(|it| &it.next_state)?,
            not_done: items.iter().map(|it| if it.done { 0.0 } else { 1.0 }).collect(),
        })
    }
}

pub fn standard_normal(rng: &mut impl Rng, n: usize) -> Vec<f32> {
    (0..n).map(|_| rng.sample::<f32, _>(StandardNormal)).collect()
}

/// Reparameterized squashed-Gaussian sample. Returns the action `[N, A]` and
/// its log-density `[N, 1]` including the tanh change of variables.
pub fn squash_fwd(t: &mut Tape, mean: Var, log_std: Var, eps: &Tensor) -> Result<(Var, Var)> {
    if t.shape(mean) != eps.shape() {
        return Err(Error::shape(t.shape(mean).to_vec(), eps.shape().to_vec()));
    }
    let a_dim = eps.shape()[1];
    let std = t.exp(log_std);
    let e = t.constant(eps.clone());
    let noise = t.mul(std, e)?;
    let u = t.add(mean, noise)?;
    let action = t.tanh(u);
    // log N(u; mean, std) = -eps^2/2 - log_std - ln(2 pi)/2
    let gauss = t.constant(eps.map(|x| -0.5 * x * x - HALF_LN_2PI));
    let gauss = t.sub(gauss, log_std)?;
    // log(1 - tanh(u)^2) = 2 (ln 2 - u - softplus(-2u))
    let m2u = t.scale(u, -2.0);
    let sp = t.softplus(m2u);
    let corr = t.add(u, sp)?;
    let corr = t.scale(corr, -2.0);
    let corr = t.add_scalar(corr, 2.0 * std::f32::consts::LN_2);
    let per_dim = t.sub(gauss, corr)?;
    let logp = t.sum_rows(per_dim)?;
    debug_assert_eq!(t.shape(logp), &[eps.shape()[0], 1]);
    let _ = a_dim;
    Ok((action, logp))
}

/// Log-density of a squashed sample in double precision, written directly
/// from the change-of-variables formula.
pub fn squashed_log_prob(u: &[f64], mean: &[f64], log_std: &[f64]) -> f64 {
    u.iter()
        .zip(mean)
        .zip(log_std)
        .map(|((&u, &m), &ls)| {
            let z = (u - m) / ls.exp();
            let gauss = -0.5 * z * z - ls - 0.5 * (2.0 * std::f64::consts::PI).ln();
            gauss - (1.0 - u.tanh().powi(2)).ln()
        })
        .sum()
}

fn rows_constant(t: &mut Tape, v: &[f32]) -> Result<Var> {
    Ok(t.constant(Tensor::from_vec(&[v.len(), 1], v.to_vec())?))
}

/// Bellman targets `r + gamma * not_done * (min(Q1', Q2') - alpha * log pi(a'|o'))`
/// with `a'` drawn from the current policy and `Q'` from the target network.
pub fn critic_target(
    cfg: &NetConfig,
    params: &ParamSet,
    target: &ParamSet,
    batch: &Batch,
    alpha: f64,
    gamma: f64,
    eps: &Tensor,
) -> Result<Vec<f32>> {
    if batch.is_empty() {
        return Err(Error::Precondition("empty batch".into()));
    }
    let mut t = Tape::new();
    let online = Bound::groups(&mut t, params, &[Group::Encoder, Group::Actor], |_| false);
    let next_obs = t.constant(batch.next_obs.clone());
    let next_state = t.constant(batch.next_state.clone());
    let z = cfg.encoder_fwd(&mut t, &online, next_obs)?;
    let (mean, log_std) = cfg.actor_fwd(&mut t, &online, z, next_state)?;
    let (a_next, logp) = squash_fwd(&mut t, mean, log_std, eps)?;
    let tb = Bound::groups(&mut t, target, &[Group::Encoder, Group::Critic], |_| false);
    let zt = cfg.encoder_fwd(&mut t, &tb, next_obs)?;
    let (q1, q2) = cfg.critic_fwd(&mut t, &tb, zt, next_state, a_next)?;
    let (q1, q2, lp) = (t.value(q1).data(), t.value(q2).data(), t.value(logp).data());
    Ok((0..batch.len())
        .map(|i| {
            let v = q1[i].min(q2[i]) as f64 - alpha * lp[i] as f64;
            (batch.reward[i] as f64 + gamma * batch.not_done[i] as f64 * v) as f32
        })
        .collect())
}

/// `mean (Q1 - y)^2 + mean (Q2 - y)^2` on the online network.
pub fn critic_loss_fwd(t: &mut Tape, cfg: &NetConfig, b: &Bound, batch: &Batch, y: &[f32]) -> Result<Var> {
    if y.len() != batch.len() || batch.is_empty() {
        return Err(Error::shape(batch.len(), y.len()));
    }
    let obs = t.constant(batch.obs.clone());
    let state = t.constant(batch.state.clone());
    let action = t.constant(batch.action.clone());
    let z = cfg.encoder_fwd(t, b, obs)?;
    let (q1, q2) = cfg.critic_fwd(t, b, z, state, action)?;
    let y = rows_constant(t, y)?;
    let mut total = None;
    for q in [q1, q2] {
        let d = t.sub(q, y)?;
        let d = t.square(d);
        let m = t.mean_all(d);
        total = Some(match total {
            None => m,
            Some(acc) => t.add(acc, m)?,
        });
    }
    Ok(total.expect("two heads"))
}

/// Critic loss value with freshly computed targets.
#[allow(clippy::too_many_arguments)]
pub fn critic_loss(
    cfg: &NetConfig,
    params: &ParamSet,
    target: &ParamSet,
    batch: &Batch,
    alpha: f64,
    gamma: f64,
    eps: &Tensor,
) -> Result<f64> {
    let y = critic_target(cfg, params, target, batch, alpha, gamma, eps)?;
    let mut t = Tape::new();
    let b = Bound::groups(&mut t, params, &[Group::Encoder, Group::Critic], |_| false);
    let l = critic_loss_fwd(&mut t, cfg, &b, batch, &y)?;
    Ok(t.value(l).item() as f64)
}

/// `mean (alpha * log pi(a|o) - min(Q1, Q2)(o, a))` with `a` reparameterized.
/// Encoder features are detached, so only actor parameters get gradients
/// when bound as trainable. Returns the loss and per-sample log-densities.
pub fn actor_loss_fwd(
    t: &mut Tape,
    cfg: &NetConfig,
    b: &Bound,
    batch: &Batch,
    alpha: f64,
    eps: &Tensor,
) -> Result<(Var, Vec<f32>)> {
    if batch.is_empty() {
        return Err(Error::Precondition("empty batch".into()));
    }
    let obs = t.constant(batch.obs.clone());
    let state = t.constant(batch.state.clone());
    let z = cfg.encoder_fwd(t, b, obs)?;
    let z = t.detach(z);
    let (mean, log_std) = cfg.actor_fwd(t, b, z, state)?;
    let (action, logp) = squash_fwd(t, mean, log_std, eps)?;
    let (q1, q2) = cfg.critic_fwd(t, b, z, state, action)?;
    let q = t.min(q1, q2)?;
    let ent = t.scale(logp, alpha as f32);
    let obj = t.sub(ent, q)?;
    let loss = t.mean_all(obj);
    let lp = t.value(logp).data().to_vec();
    Ok((loss, lp))
}

pub fn actor_loss(cfg: &NetConfig, params: &ParamSet, batch: &Batch, alpha: f64, eps: &Tensor) -> Result<f64> {
    let mut t = Tape::new();
    let b = Bound::groups(&mut t, params, &[Group::Encoder, Group::Actor, Group::Critic], |_| false);
    let (l, _) = actor_loss_fwd(&mut t, cfg, &b, batch, alpha, eps)?;
    Ok(t.value(l).item() as f64)
}

/// One gradient step on `log alpha` for `E[-log alpha (log pi + target_entropy)]`.
pub fn alpha_update(alpha: f64, log_probs: &[f32], target_entropy: f64, lr: f64) -> Result<f64> {
    if !(alpha > 0.0) {
        return Err(Error::Precondition(format!("alpha must be positive, got {alpha}")));
    }
    if log_probs.is_empty() {
        return Ok(alpha);
    }
    let mean = log_probs.iter().map(|&l| l as f64).sum::<f64>() / log_probs.len() as f64;
    let grad = -(mean + target_entropy);
    let next = (alpha.ln() - lr * grad).exp();
    // exp underflow is the only way to lose positivity.
    Ok(next.max(f64::MIN_POSITIVE))
}

/// `target <- tau * params + (1 - tau) * target` for every target entry.
pub fn target_update(params: &ParamSet, target: &mut ParamSet, tau: f64) -> Result<()> {
    let names: Vec<String> = target.names().map(str::to_string).collect();
    let (a, b) = (tau as f32, (1.0 - tau) as f32);
    for name in names {
        let src = params
            .get(&name)
            .ok_or_else(|| Error::Precondition(format!("target parameter {name:?} missing online")))?;
        let dst = target.get_mut(&name).expect("name from target");
        if src.shape() != dst.shape() {
            return Err(Error::shape(dst.shape().to_vec(), src.shape().to_vec()));
        }
        for (d, s) in dst.data_mut().iter_mut().zip(src.data()) {
            *d = a * s + b * *d;
        }
    }
    Ok(())
}

/// Policy action for one observation: a sample, or `tanh(mean)` when
/// `deterministic`.
pub fn act(
    cfg: &NetConfig,
    params: &ParamSet,
    obs: &Image,
    state: &[f32],
    rng: &mut impl Rng,
    deterministic: bool,
) -> Result<Vec<f32>> {
    let mut t = Tape::new();
    let b = Bound::groups(&mut t, params, &[Group::Encoder, Group::Actor], |_| false);
    let x = t.constant(batch_to_tensor(&[obs])?);
    let s = t.constant(Tensor::from_vec(&[1, state.len()], state.to_vec())?);
    let z = cfg.encoder_fwd(&mut t, &b, x)?;
    let (mean, log_std) = cfg.actor_fwd(&mut t, &b, z, s)?;
    let (m, ls) = (t.value(mean).data(), t.value(log_std).data());
    Ok(if deterministic {
        m.iter().map(|v| v.tanh()).collect()
    } else {
        let e = standard_normal(rng, m.len());
        (0..m.len()).map(|i| (m[i] + ls[i].exp() * e[i]).tanh()).collect()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nets::{critic_forward, encode, policy_forward, Adam, AdamConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const A: usize = 2;

    fn stored(rng: &mut ChaCha8Rng, size: usize, done: bool) -> StoredTransition {
        let view = |rng: &mut ChaCha8Rng| (0..size * size * 3).map(|_| rng.random::<u8>()).collect::<Vec<u8>>();
        let vec = |rng: &mut ChaCha8Rng, n: usize| (0..n).map(|_| rng.random_range(-1.0f32..1.0)).collect::<Vec<_>>();
        StoredTransition {
            static_view: view(rng),
            dynamic_view: view(rng),
            phi_d: 10.0,
            state: vec(rng, 4),
            action: vec(rng, A),
            reward: rng.random_range(-1.0..1.0),
            next_static_view: view(rng),
            next_state: vec(rng, 4),
            done,
        }
    }

    struct Fixture {
        cfg: NetConfig,
        params: ParamSet,
        target: ParamSet,
        items: Vec<StoredTransition>,
        batch: Batch,
        eps: Tensor,
    }

    fn fixture(n: usize) -> Fixture {
        let cfg = NetConfig::tiny(A);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let params = cfg.init_params(&mut rng).unwrap();
        // A target that differs from the online network.
        let target = cfg
            .init_params(&mut rng)
            .unwrap()
            .subset(|g| matches!(g, Group::Encoder | Group::Critic));
        let items: Vec<_> = (0..n).map(|i| stored(&mut rng, cfg.image_size, i % 3 == 2)).collect();
        let refs: Vec<_> = items.iter().collect();
        let batch = Batch::from_stored(&refs, cfg.image_size, &mut rng, None).unwrap();
        let eps = Tensor::from_vec(&[n, A], standard_normal(&mut rng, n * A)).unwrap();
        Fixture {
            cfg,
            params,
            target,
            items,
            batch,
            eps,
        }
    }

    fn sample_policy(f: &Fixture, i: usize, img: &Image, state: &[f32]) -> (Vec<f32>, f64) {
        let z = encode(&f.cfg, &f.params, img).unwrap();
        let d = policy_forward(&f.cfg, &f.params, &z, state).unwrap();
        let e = &f.eps.data()[i * A..(i + 1) * A];
        let u: Vec<f64> = (0..A).map(|k| d.mean[k] as f64 + (d.log_std[k] as f64).exp() * e[k] as f64).collect();
        let mean: Vec<f64> = d.mean.iter().map(|&v| v as f64).collect();
        let ls: Vec<f64> = d.log_std.iter().map(|&v| v as f64).collect();
        let a = u.iter().map(|v| v.tanh() as f32).collect();
        (a, squashed_log_prob(&u, &mean, &ls))
    }

    fn oracle_critic_loss(f: &Fixture, alpha: f64, gamma: f64) -> f64 {
        let size = f.cfg.image_size;
        let (mut s1, mut s2) = (0.0, 0.0);
        for (i, it) in f.items.iter().enumerate() {
            let next = it.image(&it.next_static_view, size);
            let (a_next, logp) = sample_policy(f, i, &next, &it.next_state);
            let zt = encode(&f.cfg, &f.target, &next).unwrap();
            let (t1, t2) = critic_forward(&f.cfg, &f.target, &zt, &it.next_state, &a_next).unwrap();
            let v = (t1.min(t2) as f64) - alpha * logp;
            let nd = if it.done { 0.0 } else { 1.0 };
            let y = it.reward as f64 + gamma * nd * v;
            let z = encode(&f.cfg, &f.params, &it.image(&it.static_view, size)).unwrap();
            let (q1, q2) = critic_forward(&f.cfg, &f.params, &z, &it.state, &it.action).unwrap();
            s1 += (q1 as f64 - y).powi(2);
            s2 += (q2 as f64 - y).powi(2);
        }
        let n = f.items.len() as f64;
        s1 / n + s2 / n
    }

    fn oracle_actor_loss(f: &Fixture, alpha: f64) -> f64 {
        let size = f.cfg.image_size;
        let mut sum = 0.0;
        for (i, it) in f.items.iter().enumerate() {
            let img = it.image(&it.static_view, size);
            let (a, logp) = sample_policy(f, i, &img, &it.state);
            let z = encode(&f.cfg, &f.params, &img).unwrap();
            let (q1, q2) = critic_forward(&f.cfg, &f.params, &z, &it.state, &a).unwrap();
            sum += alpha * logp - q1.min(q2) as f64;
        }
        sum / f.items.len() as f64
    }

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * b.abs().max(1.0)
    }

    #[test]
    fn critic_loss_matches_direct_recomputation() {
        let f = fixture(5);
        let got = critic_loss(&f.cfg, &f.params, &f.target, &f.batch, 0.1, 0.99, &f.eps).unwrap();
        let want = oracle_critic_loss(&f, 0.1, 0.99);
        assert!(close(got, want, 1e-6), "{got} vs {want}");
    }

    #[test]
    fn zero_discount_targets_are_rewards() {
        let f = fixture(4);
        let y = critic_target(&f.cfg, &f.params, &f.target, &f.batch, 0.5, 0.0, &f.eps).unwrap();
        assert_eq!(y, f.batch.reward);
        let got = critic_loss(&f.cfg, &f.params, &f.target, &f.batch, 0.5, 0.0, &f.eps).unwrap();
        assert!(close(got, oracle_critic_loss(&f, 0.5, 0.0), 1e-6));
    }

    #[test]
    fn critic_loss_vanishes_at_the_target() {
        let f = fixture(3);
        let mut t = Tape::new();
        let b = Bound::groups(&mut t, &f.params, &[Group::Encoder, Group::Critic], |_| false);
        let obs = t.constant(f.batch.obs.clone());
        let st = t.constant(f.batch.state.clone());
        let ac = t.constant(f.batch.action.clone());
        let z = f.cfg.encoder_fwd(&mut t, &b, obs).unwrap();
        let (q1, _) = f.cfg.critic_fwd(&mut t, &b, z, st, ac).unwrap();
        let q = t.value(q1).data().to_vec();
        // Make both heads identical so one target fits both.
        let mut p = f.params.clone();
        for part in ["fc0", "fc1", "out"] {
            for s in ["w", "b"] {
                let v = p.get(&format!("critic.q1.{part}.{s}")).unwrap().clone();
                *p.get_mut(&format!("critic.q2.{part}.{s}")).unwrap() = v;
            }
        }
        let mut t = Tape::new();
        let b = Bound::groups(&mut t, &p, &[Group::Encoder, Group::Critic], |_| false);
        let l = critic_loss_fwd(&mut t, &f.cfg, &b, &f.batch, &q).unwrap();
        assert_eq!(t.value(l).item(), 0.0);
    }

    #[test]
    fn empty_batch_rejected() {
        let cfg = NetConfig::tiny(A);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(Batch::from_stored(&[], cfg.image_size, &mut rng, None).is_err());
    }

    #[test]
    fn actor_loss_matches_direct_recomputation() {
        let f = fixture(5);
        for alpha in [0.0, 0.2] {
            let got = actor_loss(&f.cfg, &f.params, &f.batch, alpha, &f.eps).unwrap();
            let want = oracle_actor_loss(&f, alpha);
            assert!(close(got, want, 1e-6), "{got} vs {want}");
        }
    }

    #[test]
    fn actor_loss_grows_with_alpha_for_positive_log_probs() {
        let mut f = fixture(4);
        // Narrow the policy so log-densities are positive.
        for v in f.params.get_mut("actor.out.b").unwrap().data_mut()[A..].iter_mut() {
            *v = -3.0;
        }
        let mut t = Tape::new();
        let b = Bound::groups(&mut t, &f.params, &[Group::Encoder, Group::Actor, Group::Critic], |_| false);
        let (_, lp) = actor_loss_fwd(&mut t, &f.cfg, &b, &f.batch, 0.1, &f.eps).unwrap();
        assert!(lp.iter().sum::<f32>() > 0.0);
        let l = [0.0, 0.1, 0.5].map(|a| actor_loss(&f.cfg, &f.params, &f.batch, a, &f.eps).unwrap());
        assert!(l[0] < l[1] && l[1] < l[2], "{l:?}");
    }

    #[test]
    fn constant_critic_gives_no_policy_gradient_at_zero_alpha() {
        let mut f = fixture(4);
        for q in ["q1", "q2"] {
            f.params.get_mut(&format!("critic.{q}.out.w")).unwrap().data_mut().fill(0.0);
        }
        let mut t = Tape::new();
        let b = Bound::groups(&mut t, &f.params, &[Group::Encoder, Group::Actor, Group::Critic], |g| {
            g == Group::Actor
        });
        let (l, _) = actor_loss_fwd(&mut t, &f.cfg, &b, &f.batch, 0.0, &f.eps).unwrap();
        let mut g = t.backward(l).unwrap();
        let grads = b.gradients(&mut g);
        assert!(!grads.is_empty());
        for (name, g) in grads {
            assert!(g.data().iter().all(|&v| v == 0.0), "{name}");
        }
    }

    #[test]
    fn losses_reach_only_their_own_parameters() {
        let f = fixture(3);
        let y = critic_target(&f.cfg, &f.params, &f.target, &f.batch, 0.1, 0.9, &f.eps).unwrap();
        let mut t = Tape::new();
        let b = Bound::new(&mut t, &f.params, |_| true);
        let l = critic_loss_fwd(&mut t, &f.cfg, &b, &f.batch, &y).unwrap();
        let mut g = t.backward(l).unwrap();
        for name in b.gradients(&mut g).keys() {
            assert!(matches!(Group::of(name), Some(Group::Encoder | Group::Critic)), "{name}");
        }

        let mut t = Tape::new();
        let b = Bound::new(&mut t, &f.params, |_| true);
        let (l, _) = actor_loss_fwd(&mut t, &f.cfg, &b, &f.batch, 0.1, &f.eps).unwrap();
        let mut g = t.backward(l).unwrap();
        let grads = b.gradients(&mut g);
        for (name, g) in &grads {
            if Group::of(name) == Some(Group::Encoder) {
                assert!(g.data().iter().all(|&v| v == 0.0), "{name}");
            }
        }
        assert!(grads.keys().any(|n| n.starts_with("actor.")));
    }

    #[test]
    fn critic_targets_ignore_target_gradient_paths() {
        // Targets are plain values: perturbing the target network changes
        // them, but the loss tape holds no target parameter.
        let f = fixture(3);
        let y0 = critic_target(&f.cfg, &f.params, &f.target, &f.batch, 0.1, 0.9, &f.eps).unwrap();
        let mut moved = f.target.clone();
        for v in moved.get_mut("critic.q1.out.b").unwrap().data_mut() {
            *v += 1.0;
        }
        for v in moved.get_mut("critic.q2.out.b").unwrap().data_mut() {
            *v += 1.0;
        }
        let y1 = critic_target(&f.cfg, &f.params, &moved, &f.batch, 0.1, 0.9, &f.eps).unwrap();
        for i in 0..y0.len() {
            let nd = f.batch.not_done[i];
            assert!((y1[i] - y0[i] - 0.9 * nd).abs() < 1e-5);
        }
    }

    #[test]
    fn alpha_update_signs_and_stationarity() {
        let target = -2.0;
        assert_eq!(alpha_update(0.3, &[1.0, 3.0], target, 0.1).unwrap(), 0.3);
        // Entropy below target means log-probs above -target_entropy.
        assert!(alpha_update(0.3, &[3.0, 5.0], target, 0.1).unwrap() > 0.3);
        assert!(alpha_update(0.3, &[-5.0, -7.0], target, 0.1).unwrap() < 0.3);
        assert!(alpha_update(0.0, &[1.0], target, 0.1).is_err());
    }

    #[test]
    fn alpha_stays_positive_under_random_updates() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut alpha = 0.1;
        for _ in 0..100_000 {
            let lp: Vec<f32> = (0..4).map(|_| rng.random_range(-50.0..50.0)).collect();
            alpha = alpha_update(alpha, &lp, -2.0, 0.5).unwrap();
            assert!(alpha > 0.0 && alpha.is_finite());
        }
    }

    #[test]
    fn target_update_extremes_and_formula() {
        let f = fixture(1);
        let mut t1 = f.target.clone();
        target_update(&f.params, &mut t1, 1.0).unwrap();
        for (name, v) in t1.iter() {
            assert_eq!(v, f.params.get(name).unwrap());
        }
        let mut t0 = f.target.clone();
        target_update(&f.params, &mut t0, 0.0).unwrap();
        assert_eq!(t0, f.target);
        let mut t3 = f.target.clone();
        target_update(&f.params, &mut t3, 0.3).unwrap();
        for (name, v) in t3.iter() {
            let (p, old) = (f.params.get(name).unwrap(), f.target.get(name).unwrap());
            for i in 0..v.len() {
                let want = 0.3 * p.data()[i] as f64 + 0.7 * old.data()[i] as f64;
                assert!((v.data()[i] as f64 - want).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn target_update_rejects_shape_mismatch() {
        let f = fixture(1);
        let mut bad = f.target.clone();
        *bad.get_mut("critic.q1.out.b").unwrap() = Tensor::zeros(&[3]);
        assert!(target_update(&f.params, &mut bad, 0.5).is_err());
    }

    #[test]
    fn squash_log_prob_matches_formula() {
        let mut t = Tape::new();
        let mean = t.constant(Tensor::from_vec(&[1, 2], vec![0.3, -1.2]).unwrap());
        let ls = t.constant(Tensor::from_vec(&[1, 2], vec![-0.5, 0.4]).unwrap());
        let eps = Tensor::from_vec(&[1, 2], vec![0.7, -1.1]).unwrap();
        let (a, lp) = squash_fwd(&mut t, mean, ls, &eps).unwrap();
        let u = [0.3 + (-0.5f64).exp() * 0.7, -1.2 + 0.4f64.exp() * -1.1];
        let want = squashed_log_prob(&u, &[0.3, -1.2], &[-0.5, 0.4]);
        assert!((t.value(lp).item() as f64 - want).abs() < 1e-5);
        assert!((t.value(a).data()[0] as f64 - u[0].tanh()).abs() < 1e-6);
    }

    #[test]
    fn zero_discount_critic_fits_rewards() {
        let f = fixture(16);
        let mut params = f.params.clone();
        let mut opt = Adam::new(AdamConfig::with_lr(1e-3), &[Group::Encoder, Group::Critic]);
        let mut residual = f64::INFINITY;
        for _ in 0..2000 {
            let y = critic_target(&f.cfg, &params, &f.target, &f.batch, 0.1, 0.0, &f.eps).unwrap();
            let mut t = Tape::new();
            let b = Bound::groups(&mut t, &params, &[Group::Encoder, Group::Critic], |_| true);
            let l = critic_loss_fwd(&mut t, &f.cfg, &b, &f.batch, &y).unwrap();
            residual = t.value(l).item() as f64 / 2.0;
            let mut g = t.backward(l).unwrap();
            let grads = b.gradients(&mut g);
            opt.step(&mut params, &grads).unwrap();
        }
        assert!(residual < 1e-3, "{residual}");
    }

    #[test]
    fn shared_augmentation_for_current_and_next_views() {
        let cfg = NetConfig::tiny(A);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut it = stored(&mut rng, cfg.image_size, false);
        it.next_static_view = it.static_view.clone();
        let b = Batch::from_stored(&[&it], cfg.image_size, &mut rng, Some(2)).unwrap();
        assert_eq!(b.obs, b.next_obs);
        assert_eq!(b.obs.shape(), &[1, 3, 1, cfg.image_size, cfg.image_size]);
    }
}
