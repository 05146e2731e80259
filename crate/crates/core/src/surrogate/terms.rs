use super::{Pes, SurrogateSpec};
use crate::chemdata::Vec3;
use crate::scalar::Real;

/// Cubic switch `1 − 3t² + 2t³`, `t = (r − on)/(off − on)`: 1 below `on`,
/// 0 beyond `off`, C¹ in between. Returns value and `d/dr`.
pub fn switch<T: Real>(r: T, on: f64, off: f64) -> (T, T) {
    let rv = r.value();
    if rv <= on {
        return (T::one(), T::zero());
    }
    if rv >= off {
        return (T::zero(), T::zero());
    }
    let w = off - on;
    let t = (r - T::lift(on)).scale(1.0 / w);
    let t2 = t * t;
    (T::one() - t2.scale(3.0) + (t2 * t).scale(2.0), (t2 - t).scale(6.0 / w))
}

#[inline]
fn lj<T: Real>(r: T, eps: f64, sigma: f64) -> (T, T) {
    let sr = T::lift(sigma) / r;
    let s3 = sr * sr * sr;
    let s6 = s3 * s3;
    let e = (s6 * s6 - s6).scale(4.0 * eps);
    let de = (s6.scale(6.0) - (s6 * s6).scale(12.0)).scale(4.0 * eps) / r;
    (e, de)
}

#[derive(Clone, Copy)]
struct PairParams {
    eps: f64,
    sigma: f64,
    qq: f64,
}

/// Lorentz–Berthelot mixed parameters indexed `[is_h(a)][is_h(b)]`.
fn pair_table(s: &SurrogateSpec) -> [[PairParams; 2]; 2] {
    let site = [(s.lj_o_epsilon, s.lj_o_sigma, s.q_o), (s.lj_h_epsilon, s.lj_h_sigma, s.q_h)];
    let mix = |a: usize, b: usize| PairParams {
        eps: (site[a].0 * site[b].0).sqrt(),
        sigma: 0.5 * (site[a].1 + site[b].1),
        qq: s.coulomb_k * site[a].2 * site[b].2,
    };
    [[mix(0, 0), mix(0, 1)], [mix(1, 0), mix(1, 1)]]
}

#[inline]
fn sub<T: Real>(a: &[T; 3], b: &[T; 3]) -> [T; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
fn dot<T: Real>(a: &[T; 3], b: &[T; 3]) -> T {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
fn norm<T: Real>(a: &[T; 3]) -> T {
    dot(a, a).sqrt()
}

/// Unswitched LJ + Coulomb energy of an atom pair and its radial derivative.
#[inline]
fn pair<T: Real>(p: PairParams, r: T) -> (T, T) {
    let (el, del) = lj(r, p.eps, p.sigma);
    let ec = T::lift(p.qq) / r;
    (el + ec, del - ec / r)
}

/// Energy of water clusters laid out O,H,H per molecule, in any scalar.
pub fn energy_generic<T: Real>(s: &SurrogateSpec, pes: Pes, pos: &[[T; 3]]) -> T {
    let nw = pos.len() / 3;
    let table = pair_table(s);
    let theta0 = s.theta0();
    let mut e = T::zero();
    for m in 0..nw {
        let o = &pos[3 * m];
        let a = sub(&pos[3 * m + 1], o);
        let b = sub(&pos[3 * m + 2], o);
        let (la, lb) = (norm(&a), norm(&b));
        let da = la - T::lift(s.oh_r0);
        let db = lb - T::lift(s.oh_r0);
        e += (da * da + db * db).scale(s.oh_k);
        let c = (dot(&a, &b) / (la * lb)).max(-T::one()).min(T::one());
        let dt = c.acos() - T::lift(theta0);
        e += (dt * dt).scale(s.hoh_k);
    }
    // Molecule pairs are switched as neutral groups on their O–O distance.
    for m in 0..nw {
        for n in (m + 1)..nw {
            let (sw, _) = switch(norm(&sub(&pos[3 * m], &pos[3 * n])), s.switch_on, s.switch_off);
            if sw.value() == 0.0 {
                continue;
            }
            let mut emn = T::zero();
            for i in 3 * m..3 * m + 3 {
                for j in 3 * n..3 * n + 3 {
                    emn += pair(table[(i % 3 != 0) as usize][(j % 3 != 0) as usize], norm(&sub(&pos[i], &pos[j]))).0;
                }
            }
            e += emn * sw;
        }
    }
    if pes == Pes::A {
        return e;
    }

    let b = &s.pes_b;
    let mut eb = e.scale(b.scale);
    let mut w = vec![T::zero(); nw * nw];
    for m in 0..nw {
        for n in (m + 1)..nw {
            let r = norm(&sub(&pos[3 * m], &pos[3 * n]));
            let (wv, _) = switch(r, b.binding_on, b.binding_off);
            w[m * nw + n] = wv;
            w[n * nw + m] = wv;
            let (sw, _) = switch(r, s.switch_on, s.switch_off);
            eb += (lj(r, s.lj_o_epsilon, b.oo_sigma).0 * sw).scale(b.oo_weight);
        }
    }
    for m in 0..nw {
        let mut free = T::one();
        for n in 0..nw {
            if n != m {
                free *= T::one() - w[m * nw + n];
            }
        }
        eb += (T::one() - free).scale(b.per_water);
    }
    eb
}

#[inline]
fn add_radial(g: &mut [Vec3], i: usize, j: usize, d: &Vec3, r: f64, de: f64) {
    let f = de / r;
    for k in 0..3 {
        g[i][k] += f * d[k];
        g[j][k] -= f * d[k];
    }
}

/// Energy and analytic gradient `∂E/∂x` (f64).
pub(crate) fn energy_gradient(s: &SurrogateSpec, pes: Pes, pos: &[Vec3]) -> (f64, Vec<Vec3>) {
    let nw = pos.len() / 3;
    let table = pair_table(s);
    let theta0 = s.theta0();
    let mut g = vec![[0.0; 3]; pos.len()];
    let mut e = 0.0;
    for m in 0..nw {
        let (io, i1, i2) = (3 * m, 3 * m + 1, 3 * m + 2);
        let a = sub(&pos[i1], &pos[io]);
        let b = sub(&pos[i2], &pos[io]);
        let (la, lb) = (norm(&a), norm(&b));
        let (da, db) = (la - s.oh_r0, lb - s.oh_r0);
        e += s.oh_k * (da * da + db * db);
        add_radial(&mut g, i1, io, &a, la, 2.0 * s.oh_k * da);
        add_radial(&mut g, i2, io, &b, lb, 2.0 * s.oh_k * db);

        let c = (dot(&a, &b) / (la * lb)).clamp(-1.0, 1.0);
        let theta = c.acos();
        e += s.hoh_k * (theta - theta0).powi(2);
        let sin = (1.0 - c * c).sqrt().max(1e-12);
        let de_dc = -2.0 * s.hoh_k * (theta - theta0) / sin;
        for k in 0..3 {
            let dca = b[k] / (la * lb) - c * a[k] / (la * la);
            let dcb = a[k] / (la * lb) - c * b[k] / (lb * lb);
            g[i1][k] += de_dc * dca;
            g[i2][k] += de_dc * dcb;
            g[io][k] -= de_dc * (dca + dcb);
        }
    }
    for m in 0..nw {
        for n in (m + 1)..nw {
            let doo = sub(&pos[3 * m], &pos[3 * n]);
            let roo = norm(&doo);
            let (sw, dsw) = switch(roo, s.switch_on, s.switch_off);
            if sw == 0.0 {
                continue;
            }
            let mut emn = 0.0;
            for i in 3 * m..3 * m + 3 {
                for j in 3 * n..3 * n + 3 {
                    let d = sub(&pos[i], &pos[j]);
                    let r = norm(&d);
                    let (pe, de) = pair(table[(i % 3 != 0) as usize][(j % 3 != 0) as usize], r);
                    emn += pe;
                    add_radial(&mut g, i, j, &d, r, de * sw);
                }
            }
            e += emn * sw;
            add_radial(&mut g, 3 * m, 3 * n, &doo, roo, emn * dsw);
        }
    }
    if pes == Pes::A {
        return (e, g);
    }

    let b = &s.pes_b;
    let mut eb = b.scale * e;
    for v in g.iter_mut().flatten() {
        *v *= b.scale;
    }
    let mut w = vec![0.0; nw * nw];
    let mut dw = vec![0.0; nw * nw];
    for m in 0..nw {
        for n in (m + 1)..nw {
            let d = sub(&pos[3 * m], &pos[3 * n]);
            let r = norm(&d);
            let (wv, dwv) = switch(r, b.binding_on, b.binding_off);
            w[m * nw + n] = wv;
            w[n * nw + m] = wv;
            dw[m * nw + n] = dwv;
            dw[n * nw + m] = dwv;
            let (sw, dsw) = switch(r, s.switch_on, s.switch_off);
            let (el, del) = lj(r, s.lj_o_epsilon, b.oo_sigma);
            eb += b.oo_weight * el * sw;
            add_radial(&mut g, 3 * m, 3 * n, &d, r, b.oo_weight * (del * sw + el * dsw));
        }
    }
    for m in 0..nw {
        let mut free = 1.0;
        for n in 0..nw {
            if n != m {
                free *= 1.0 - w[m * nw + n];
            }
        }
        eb += b.per_water * (1.0 - free);
        // ∂s_m/∂r_mn = w′(r_mn) · Π_{l≠m,n} (1 − w_ml)
        for n in 0..nw {
            if n == m || dw[m * nw + n] == 0.0 {
                continue;
            }
            let mut others = 1.0;
            for l in 0..nw {
                if l != m && l != n {
                    others *= 1.0 - w[m * nw + l];
                }
            }
            let d = sub(&pos[3 * m], &pos[3 * n]);
            add_radial(&mut g, 3 * m, 3 * n, &d, norm(&d), b.per_water * dw[m * nw + n] * others);
        }
    }
    (eb, g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::Dual;

    fn dimer() -> Vec<Vec3> {
        vec![
            [0.0, 0.0, 0.0],
            [0.9572, 0.0, 0.0],
            [-0.24, 0.927, 0.0],
            [2.85, 0.2, 0.1],
            [3.3, 0.95, -0.1],
            [3.25, -0.6, 0.4],
        ]
    }

    #[test]
    fn switch_is_c1() {
        let (v, d) = switch(8.0f64 + 1e-9, 8.0, 9.0);
        assert!((v - 1.0).abs() < 1e-12 && d.abs() < 1e-6);
        let (v, d) = switch(9.0f64 - 1e-9, 8.0, 9.0);
        assert!(v.abs() < 1e-12 && d.abs() < 1e-6);
        assert_eq!(switch(8.5f64, 8.0, 9.0).0, 0.5);
    }

    #[test]
    fn lj_minimum_is_minus_epsilon() {
        let sigma = 3.1507;
        let (e, de) = lj(2f64.powf(1.0 / 6.0) * sigma, 0.1521, sigma);
        assert!((e + 0.1521).abs() < 1e-12);
        assert!(de.abs() < 1e-12);
    }

    #[test]
    fn dual_directional_derivative_matches_gradient() {
        let s = SurrogateSpec::default();
        let pos = dimer();
        let u: Vec<Vec3> = (0..6).map(|i| [(i as f64).sin(), (1.3 * i as f64).cos(), 0.5 - 0.1 * i as f64]).collect();
        for pes in [Pes::A, Pes::B] {
            let (_, g) = energy_gradient(&s, pes, &pos);
            let dp: Vec<[Dual<f64>; 3]> = pos
                .iter()
                .zip(&u)
                .map(|(p, d)| [Dual::new(p[0], d[0]), Dual::new(p[1], d[1]), Dual::new(p[2], d[2])])
                .collect();
            let de = energy_generic(&s, pes, &dp).eps;
            let expect: f64 = g.iter().zip(&u).map(|(a, b)| dot(a, b)).sum();
            assert!((de - expect).abs() < 1e-10 * (1.0 + expect.abs()), "{pes:?}: {de} vs {expect}");
        }
    }
}
