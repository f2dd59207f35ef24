//! SEIR news propagation on a follower network.
//!
//! Infected users post fake news and Recovered users post true news with a
//! posting intensity that decays exponentially from the moment they entered
//! that e-state. Time advances in fixed ticks; within a tick each spreader
//! posts at most once with probability `min(1, intensity * dt)`. Every
//! delivery bumps the receiver's news counter and immediately resolves the
//! receiver's logistic transition.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use rand::seq::index::sample;
use rand::Rng;

use crate::error::{Error, Result};
use crate::netgen::SocialGraph;
use crate::rng::{stream, stream_rng, SimRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EState {
    Susceptible,
    Exposed,
    Infected,
    Recovered,
}

impl EState {
    pub fn code(self) -> char {
        match self {
            EState::Susceptible => 'S',
            EState::Exposed => 'E',
            EState::Infected => 'I',
            EState::Recovered => 'R',
        }
    }
}

impl fmt::Display for EState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.code())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NewsKind {
    Fake,
    True,
}

impl NewsKind {
    pub fn code(self) -> char {
        match self {
            NewsKind::Fake => 'F',
            NewsKind::True => 'M',
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UserDynamics {
    pub e_state: EState,
    /// Fake news items received.
    pub n_fake: u32,
    /// True news items received.
    pub n_true: u32,
    /// Initial posting intensity, drawn on entry into Infected/Recovered.
    pub xi: f64,
    /// Time of the last entry into Infected/Recovered.
    pub t_c: f64,
}

impl Default for UserDynamics {
    fn default() -> Self {
        Self {
            e_state: EState::Susceptible,
            n_fake: 0,
            n_true: 0,
            xi: 0.0,
            t_c: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PropagationParams {
    /// Logistic growth rate.
    pub delta: f64,
    /// Intensity decay rate.
    pub omega: f64,
    /// Tick length.
    pub dt: f64,
}

impl Default for PropagationParams {
    fn default() -> Self {
        Self {
            delta: 1.0,
            omega: 1.0,
            dt: 0.1,
        }
    }
}

impl PropagationParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0) {
            return Err(Error::InvalidParameter(format!("delta = {} must be > 0", self.delta)));
        }
        if !(self.omega >= 0.0) {
            return Err(Error::InvalidParameter(format!("omega = {} must be >= 0", self.omega)));
        }
        if !(self.dt > 0.0 && self.dt <= 1.0) {
            return Err(Error::InvalidParameter(format!("dt = {} must be in (0, 1]", self.dt)));
        }
        Ok(())
    }
}

/// Distribution of initial intensities.
#[derive(Debug, Clone, PartialEq)]
pub enum IntensityDist {
    Uniform { low: f64, high: f64 },
    /// Draws uniformly from a list of observed values.
    Empirical(Vec<f64>),
}

impl Default for IntensityDist {
    fn default() -> Self {
        IntensityDist::Uniform { low: 0.5, high: 1.5 }
    }
}

impl IntensityDist {
    pub fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        match self {
            IntensityDist::Uniform { low, high } if low >= high => *low,
            IntensityDist::Uniform { low, high } => rng.gen_range(*low..*high),
            IntensityDist::Empirical(values) => values[rng.gen_range(0..values.len())],
        }
    }

    /// One nonnegative value per line; blank and `#` lines are ignored.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let mut values = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            match line.parse::<f64>() {
                Ok(v) if v.is_finite() && v >= 0.0 => values.push(v),
                _ => {
                    return Err(Error::MalformedLine {
                        path: path.to_path_buf(),
                        line: idx + 1,
                        text: raw.to_string(),
                    })
                }
            }
        }
        if values.is_empty() {
            return Err(Error::InvalidParameter(format!(
                "{}: intensity file has no values",
                path.display()
            )));
        }
        Ok(IntensityDist::Empirical(values))
    }
}

pub fn logistic(x: f64, midpoint: f64, delta: f64) -> f64 {
    1.0 / (1.0 + (-delta * (x - midpoint)).exp())
}

/// `(p_infect, p_recover)` for a user given its received news counts.
/// At most one of the two is nonzero.
pub fn transition_probs(user: &UserDynamics, midpoint: f64, delta: f64) -> (f64, f64) {
    let fake = f64::from(user.n_fake);
    let truth = f64::from(user.n_true);
    if user.n_fake > user.n_true {
        (logistic(fake - truth, midpoint, delta), 0.0)
    } else if user.n_true > user.n_fake {
        (0.0, logistic(truth - fake, midpoint, delta))
    } else {
        (0.0, 0.0)
    }
}

/// Posting intensity of an Infected or Recovered user at time `t`.
pub fn intensity_at(user: &UserDynamics, t: f64, omega: f64) -> Result<f64> {
    match user.e_state {
        EState::Infected | EState::Recovered => Ok(user.xi * (-omega * (t - user.t_c)).exp()),
        other => Err(Error::Contract(format!(
            "intensity requested for a user in e-state {other}"
        ))),
    }
}

/// One post and the resulting e-state of every receiver.
#[derive(Debug, Clone, PartialEq)]
pub struct PostEvent {
    pub time: f64,
    pub poster: usize,
    pub kind: NewsKind,
    pub deliveries: Vec<(usize, EState)>,
}

#[derive(Debug, Clone)]
pub struct SimState {
    graph: Arc<SocialGraph>,
    users: Vec<UserDynamics>,
    clock: f64,
    posts_fake: Vec<u32>,
    posts_true: Vec<u32>,
    intensity: IntensityDist,
    posting_rng: SimRng,
    transition_rng: SimRng,
    intensity_rng: SimRng,
    spreader_rng: SimRng,
}

impl SimState {
    pub fn new(graph: Arc<SocialGraph>, seed: u64) -> Self {
        Self::with_intensity(graph, seed, IntensityDist::default())
    }

    pub fn with_intensity(graph: Arc<SocialGraph>, seed: u64, intensity: IntensityDist) -> Self {
        let n = graph.n();
        Self {
            graph,
            users: vec![UserDynamics::default(); n],
            clock: 0.0,
            posts_fake: vec![0; n],
            posts_true: vec![0; n],
            intensity,
            posting_rng: stream_rng(seed, stream::POSTING),
            transition_rng: stream_rng(seed, stream::TRANSITION),
            intensity_rng: stream_rng(seed, stream::INTENSITY),
            spreader_rng: stream_rng(seed, stream::SPREADERS),
        }
    }

    pub fn graph(&self) -> &SocialGraph {
        &self.graph
    }

    pub fn shared_graph(&self) -> &Arc<SocialGraph> {
        &self.graph
    }

    pub fn n(&self) -> usize {
        self.users.len()
    }

    pub fn clock(&self) -> f64 {
        self.clock
    }

    pub fn users(&self) -> &[UserDynamics] {
        &self.users
    }

    pub fn user(&self, i: usize) -> &UserDynamics {
        &self.users[i]
    }

    /// Fake-news posts per user since the last [`SimState::reset_post_counts`].
    pub fn posts_fake(&self) -> &[u32] {
        &self.posts_fake
    }

    pub fn posts_true(&self) -> &[u32] {
        &self.posts_true
    }

    pub fn reset_post_counts(&mut self) {
        self.posts_fake.iter_mut().for_each(|c| *c = 0);
        self.posts_true.iter_mut().for_each(|c| *c = 0);
    }

    pub fn count(&self, state: EState) -> usize {
        self.users.iter().filter(|u| u.e_state == state).count()
    }

    fn check_user(&self, user: usize) -> Result<()> {
        if user >= self.n() {
            return Err(Error::UserOutOfRange { user, n: self.n() });
        }
        Ok(())
    }

    fn enter(&mut self, user: usize, state: EState, t: f64) {
        let xi = self.intensity.sample(&mut self.intensity_rng);
        let u = &mut self.users[user];
        u.e_state = state;
        u.xi = xi;
        u.t_c = t;
    }

    /// Makes `user` a fake-news spreader starting now.
    pub fn infect(&mut self, user: usize) -> Result<()> {
        self.check_user(user)?;
        self.enter(user, EState::Infected, self.clock);
        Ok(())
    }

    /// Picks `k` distinct users uniformly at random as initial fake-news
    /// spreaders.
    pub fn seed_fake_spreaders(&mut self, k: usize) -> Result<()> {
        let chosen = choose_spreaders(self.n(), k, &mut self.spreader_rng)?;
        for user in chosen {
            self.infect(user)?;
        }
        Ok(())
    }

    /// Turns `user` into a true-news spreader starting now. Redeploying an
    /// existing debunker refreshes its intensity.
    pub fn deploy_debunker(&mut self, user: usize) -> Result<()> {
        self.check_user(user)?;
        self.enter(user, EState::Recovered, self.clock);
        Ok(())
    }

    fn receive(&mut self, receiver: usize, kind: NewsKind, t: f64, delta: f64) -> EState {
        {
            let u = &mut self.users[receiver];
            match kind {
                NewsKind::Fake => u.n_fake += 1,
                NewsKind::True => u.n_true += 1,
            }
            if u.e_state == EState::Susceptible {
                u.e_state = EState::Exposed;
            }
        }
        let midpoint = self.graph.midpoints()[receiver];
        let (p_infect, p_recover) = transition_probs(&self.users[receiver], midpoint, delta);
        let current = self.users[receiver].e_state;
        if p_infect > 0.0 && current != EState::Infected {
            if self.transition_rng.gen::<f64>() < p_infect {
                self.enter(receiver, EState::Infected, t);
            }
        } else if p_recover > 0.0
            && current != EState::Recovered
            && self.transition_rng.gen::<f64>() < p_recover
        {
            self.enter(receiver, EState::Recovered, t);
        }
        self.users[receiver].e_state
    }

    fn advance(&mut self, step: f64, params: &PropagationParams, log: Option<&mut Vec<PostEvent>>) {
        let t = self.clock;
        let mut posters = Vec::new();
        for (i, u) in self.users.iter().enumerate() {
            let kind = match u.e_state {
                EState::Infected => NewsKind::Fake,
                EState::Recovered => NewsKind::True,
                _ => continue,
            };
            let rate = u.xi * (-params.omega * (t - u.t_c)).exp();
            let p = (rate * step).min(1.0);
            if self.posting_rng.gen::<f64>() < p {
                posters.push((i, kind));
            }
        }
        let graph = Arc::clone(&self.graph);
        let mut log = log;
        for (poster, kind) in posters {
            match kind {
                NewsKind::Fake => self.posts_fake[poster] += 1,
                NewsKind::True => self.posts_true[poster] += 1,
            }
            let mut deliveries = Vec::new();
            for &receiver in graph.followers_of(poster) {
                let state = self.receive(receiver, kind, t, params.delta);
                if log.is_some() {
                    deliveries.push((receiver, state));
                }
            }
            if let Some(events) = log.as_deref_mut() {
                events.push(PostEvent {
                    time: t,
                    poster,
                    kind,
                    deliveries,
                });
            }
        }
        self.clock = t + step;
    }

    /// Advances the clock by one tick of length `dt`.
    pub fn tick(&mut self, params: &PropagationParams) -> Vec<PostEvent> {
        let mut events = Vec::new();
        self.advance(params.dt, params, Some(&mut events));
        events
    }

    fn run(&mut self, t_end: f64, params: &PropagationParams, mut log: Option<&mut Vec<PostEvent>>) {
        // Tolerance absorbs accumulated rounding in the clock.
        let eps = 1e-9 * t_end.abs().max(1.0);
        while t_end - self.clock > eps {
            let step = params.dt.min(t_end - self.clock);
            self.advance(step, params, log.as_deref_mut());
        }
        if self.clock < t_end {
            self.clock = t_end;
        }
    }

    /// Advances to `t_end` in ticks of `dt`; the last tick is shortened to
    /// land exactly on `t_end`.
    pub fn run_until(&mut self, t_end: f64, params: &PropagationParams) {
        self.run(t_end, params, None);
    }

    pub fn run_until_logged(&mut self, t_end: f64, params: &PropagationParams) -> Vec<PostEvent> {
        let mut events = Vec::new();
        self.run(t_end, params, Some(&mut events));
        events
    }
}

pub(crate) fn choose_spreaders<R: Rng>(n: usize, k: usize, rng: &mut R) -> Result<Vec<usize>> {
    if k > n {
        return Err(Error::InvalidParameter(format!(
            "cannot seed {k} spreaders among {n} users"
        )));
    }
    let mut chosen = sample(rng, n, k).into_vec();
    chosen.sort_unstable();
    Ok(chosen)
}

/// CSV: tick_time,poster,kind,receiver,new_estate
pub fn write_event_log<W: Write>(events: &[PostEvent], mut out: W) -> Result<()> {
    writeln!(out, "tick_time,poster,kind,receiver,new_estate")?;
    for ev in events {
        for &(receiver, state) in &ev.deliveries {
            writeln!(
                out,
                "{:.6},{},{},{},{}",
                ev.time,
                ev.poster,
                ev.kind.code(),
                receiver,
                state.code()
            )?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn star(followers: usize) -> Arc<SocialGraph> {
        Arc::new(SocialGraph::from_edges(followers + 1, (1..=followers).map(|v| (0, v))).unwrap())
    }

    #[test]
    fn logistic_values() {
        assert_eq!(logistic(1.7, 1.7, 1.0), 0.5);
        assert!((logistic(3.0, 1.0, 1.0) - 0.880797).abs() < 1e-6);
        assert_eq!(logistic(1e6, 1.0, 1.0), 1.0);
        assert_eq!(logistic(-1e6, 1.0, 1.0), 0.0);
    }

    #[test]
    fn transition_probs_examples() {
        let mut u = UserDynamics::default();
        assert_eq!(transition_probs(&u, 1.0, 1.0), (0.0, 0.0));
        u.n_fake = 3;
        u.n_true = 1;
        let (pi, pr) = transition_probs(&u, 1.0, 1.0);
        assert!((pi - 0.731059).abs() < 1e-6);
        assert_eq!(pr, 0.0);
        std::mem::swap(&mut u.n_fake, &mut u.n_true);
        let (pi2, pr2) = transition_probs(&u, 1.0, 1.0);
        assert_eq!((pi2, pr2), (0.0, pi));
    }

    #[test]
    fn larger_midpoint_means_smaller_probability() {
        let u = UserDynamics { n_fake: 4, n_true: 1, ..Default::default() };
        let mut last = 1.0;
        for m in [1.0, 1.5, 2.0, 2.5, 3.0] {
            let (p, _) = transition_probs(&u, m, 1.0);
            assert!(p < last);
            last = p;
        }
    }

    #[test]
    fn intensity_examples() {
        let u = UserDynamics { e_state: EState::Infected, xi: 1.0, t_c: 2.0, ..Default::default() };
        assert_eq!(intensity_at(&u, 2.0, 1.0).unwrap(), 1.0);
        assert!((intensity_at(&u, 3.0, 1.0).unwrap() - 0.367879).abs() < 1e-6);
        assert_eq!(intensity_at(&u, 50.0, 0.0).unwrap(), 1.0);
        let s = UserDynamics::default();
        assert!(matches!(intensity_at(&s, 0.0, 1.0), Err(Error::Contract(_))));
    }

    #[test]
    fn no_spreaders_no_events() {
        let mut st = SimState::new(star(5), 1);
        let events = st.tick(&PropagationParams::default());
        assert!(events.is_empty());
        assert!(st.users().iter().all(|u| u.n_fake == 0 && u.n_true == 0));
    }

    #[test]
    fn forced_post_reaches_every_follower_once() {
        let graph = star(6);
        let mut st = SimState::with_intensity(graph, 3, IntensityDist::Uniform { low: 10.0, high: 10.0 });
        st.infect(0).unwrap();
        let params = PropagationParams { delta: 1.0, omega: 0.0, dt: 1.0 };
        let events = st.tick(&params);
        assert_eq!(events.len(), 1);
        assert_eq!(events[0].poster, 0);
        assert_eq!(events[0].deliveries.len(), 6);
        for v in 1..=6 {
            assert_eq!(st.user(v).n_fake, 1);
            assert_ne!(st.user(v).e_state, EState::Susceptible);
        }
        assert_eq!(st.posts_fake()[0], 1);
        assert!((st.clock() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn seeding_spreaders() {
        let g = Arc::new(SocialGraph::from_edges(1250, []).unwrap());
        let mut st = SimState::new(Arc::clone(&g), 5);
        st.seed_fake_spreaders(20).unwrap();
        assert_eq!(st.count(EState::Infected), 20);
        assert_eq!(st.count(EState::Susceptible), 1230);
        for u in st.users().iter().filter(|u| u.e_state == EState::Infected) {
            assert!((0.5..1.5).contains(&u.xi));
            assert_eq!(u.t_c, 0.0);
        }

        let mut st = SimState::new(Arc::clone(&g), 5);
        st.seed_fake_spreaders(0).unwrap();
        assert_eq!(st.count(EState::Susceptible), 1250);
        let mut st = SimState::new(Arc::clone(&g), 5);
        st.seed_fake_spreaders(1250).unwrap();
        assert_eq!(st.count(EState::Infected), 1250);
        assert!(SimState::new(g, 5).seed_fake_spreaders(1251).is_err());
    }

    #[test]
    fn debunker_deployment() {
        let g = star(4);
        let mut st = SimState::new(g, 2);
        st.infect(1).unwrap();
        let before = st.users().to_vec();
        st.deploy_debunker(3).unwrap();
        for (i, (a, b)) in before.iter().zip(st.users()).enumerate() {
            if i == 3 {
                assert_eq!(b.e_state, EState::Recovered);
            } else {
                assert_eq!(a, b);
            }
        }
        st.deploy_debunker(1).unwrap();
        assert_eq!(st.count(EState::Infected), 0);
        assert!(st.deploy_debunker(5).is_err());
    }

    #[test]
    fn redeploy_refreshes_intensity_clock() {
        let g = star(4);
        let mut st = SimState::new(g, 2);
        st.deploy_debunker(0).unwrap();
        let first = st.user(0).clone();
        st.run_until(2.0, &PropagationParams::default());
        st.deploy_debunker(0).unwrap();
        let second = st.user(0);
        assert_eq!(first.t_c, 0.0);
        assert!((second.t_c - 2.0).abs() < 1e-12);
        assert_ne!(first.xi, second.xi);
    }

    #[test]
    fn run_until_now_is_a_no_op() {
        let mut st = SimState::new(star(3), 1);
        st.infect(0).unwrap();
        let before = st.clone();
        st.run_until(0.0, &PropagationParams::default());
        assert_eq!(st.users(), before.users());
        assert_eq!(st.clock(), 0.0);
    }

    #[test]
    fn partial_final_step_lands_on_target() {
        let mut st = SimState::new(star(3), 1);
        st.run_until(0.35, &PropagationParams::default());
        assert_eq!(st.clock(), 0.35);
    }

    #[test]
    fn event_log_csv() {
        let mut st = SimState::with_intensity(star(2), 3, IntensityDist::Uniform { low: 10.0, high: 10.0 });
        st.infect(0).unwrap();
        let events = st.tick(&PropagationParams { delta: 1.0, omega: 0.0, dt: 1.0 });
        let mut buf = Vec::new();
        write_event_log(&events, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], "tick_time,poster,kind,receiver,new_estate");
        assert_eq!(lines.len(), 3);
        assert!(lines[1].starts_with("0.000000,0,F,1,"));
    }

    #[test]
    fn empirical_intensity_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("xi.txt");
        std::fs::write(&p, "# observed\n0.7\n1.2\n").unwrap();
        let dist = IntensityDist::load(&p).unwrap();
        let mut rng = stream_rng(1, 0);
        for _ in 0..20 {
            let v = dist.sample(&mut rng);
            assert!(v == 0.7 || v == 1.2);
        }
        std::fs::write(&p, "0.7\n-3\n").unwrap();
        assert!(matches!(IntensityDist::load(&p), Err(Error::MalformedLine { line: 2, .. })));
    }
}
