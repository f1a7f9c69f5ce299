//! Exact discrete optimal transport by successive shortest augmenting paths.
//!
//! Sources carry `supply`, sinks carry `demand`, every source-sink edge has
//! unbounded capacity. Node potentials keep reduced costs nonnegative so each
//! shortest-path search is a dense Dijkstra.

/// Minimum of `sum f_ij c_ij` over couplings of `supply` and `demand`.
///
/// `cost` is row-major `supply.len() x demand.len()` with nonnegative entries.
pub(crate) fn min_cost_transport(supply: &[f64], demand: &[f64], cost: &[f64]) -> f64 {
    let na = supply.len();
    let nb = demand.len();
    debug_assert_eq!(cost.len(), na * nb);
    let total: f64 = supply.iter().sum();
    let eps = 1e-14 * total.max(f64::MIN_POSITIVE);

    let mut left = supply.to_vec();
    let mut need = demand.to_vec();
    let mut flow = vec![0.0; na * nb];
    // nodes 0..na are sources, na..na+nb sinks
    let nv = na + nb;
    let mut pot = vec![0.0; nv];
    let mut dist = vec![0.0; nv];
    let mut prev = vec![usize::MAX; nv];
    let mut done = vec![false; nv];

    loop {
        if left.iter().all(|s| *s <= eps) {
            break;
        }
        dist.iter_mut().for_each(|d| *d = f64::INFINITY);
        prev.iter_mut().for_each(|p| *p = usize::MAX);
        done.iter_mut().for_each(|d| *d = false);
        for i in 0..na {
            if left[i] > eps {
                dist[i] = 0.0;
            }
        }
        let mut target = None;
        loop {
            let mut best = f64::INFINITY;
            let mut u = usize::MAX;
            for v in 0..nv {
                if !done[v] && dist[v] < best {
                    best = dist[v];
                    u = v;
                }
            }
            if u == usize::MAX {
                break;
            }
            done[u] = true;
            if u >= na {
                let j = u - na;
                if need[j] > eps {
                    target = Some(u);
                    break;
                }
                // reverse edges j -> i where flow is positive
                for i in 0..na {
                    if !done[i] && flow[i * nb + j] > eps {
                        let rc = (-cost[i * nb + j] + pot[u] - pot[i]).max(0.0);
                        if dist[u] + rc < dist[i] {
                            dist[i] = dist[u] + rc;
                            prev[i] = u;
                        }
                    }
                }
            } else {
                let i = u;
                for j in 0..nb {
                    let v = na + j;
                    if !done[v] {
                        let rc = (cost[i * nb + j] + pot[i] - pot[v]).max(0.0);
                        if dist[u] + rc < dist[v] {
                            dist[v] = dist[u] + rc;
                            prev[v] = u;
                        }
                    }
                }
            }
        }
        let Some(t) = target else { break };
        let dt = dist[t];
        for v in 0..nv {
            pot[v] += dist[v].min(dt);
        }

        // bottleneck along the path
        let mut delta = need[t - na];
        let mut v = t;
        while prev[v] != usize::MAX {
            let u = prev[v];
            if u >= na {
                // reverse edge sink u -> source v
                delta = delta.min(flow[v * nb + (u - na)]);
            }
            v = u;
        }
        delta = delta.min(left[v]);

        let origin = v;
        let mut v = t;
        while prev[v] != usize::MAX {
            let u = prev[v];
            if u >= na {
                flow[v * nb + (u - na)] -= delta;
            } else {
                flow[u * nb + (v - na)] += delta;
            }
            v = u;
        }
        left[origin] -= delta;
        need[t - na] -= delta;
    }

    flow.iter().zip(cost).map(|(f, c)| f * c).sum()
}
