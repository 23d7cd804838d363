use rand::Rng;
use rand_distr::StandardNormal;

/// Noisy displacement towards the goal, shrunk (never stretched) so that no
/// component exceeds 1.
pub fn scripted_expert(
    pos: [f64; 2],
    goal: [f64; 2],
    noise_std: f64,
    rng: &mut impl Rng,
) -> [f64; 2] {
    let mut v = [goal[0] - pos[0], goal[1] - pos[1]];
    if noise_std > 0.0 {
        for x in &mut v {
            *x += noise_std * rng.sample::<f64, _>(StandardNormal);
        }
    }
    let m = v[0].abs().max(v[1].abs());
    if m > 1.0 {
        v = [v[0] / m, v[1] / m];
    }
    v
}
