use rand::Rng;

use crate::error::{Error, Result};

/// Draws `n_com` distinct peers other than `client_id`, uniformly without replacement.
pub fn build_queue<R: Rng + ?Sized>(
    client_id: usize,
    clients: usize,
    n_com: usize,
    rng: &mut R,
) -> Result<Vec<usize>> {
    if client_id >= clients {
        return Err(Error::UnknownClient(client_id));
    }
    if n_com == 0 || n_com > clients - 1 {
        return Err(Error::config(format!(
            "queue of {n_com} peers impossible with {clients} clients"
        )));
    }
    Ok(rand::seq::index::sample(rng, clients - 1, n_com)
        .into_iter()
        .map(|j| if j >= client_id { j + 1 } else { j })
        .collect())
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn two_clients_pick_each_other() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(build_queue(0, 2, 1, &mut rng).unwrap(), vec![1]);
        assert_eq!(build_queue(1, 2, 1, &mut rng).unwrap(), vec![0]);
    }

    #[test]
    fn queue_is_reproducible_and_valid() {
        let a = build_queue(3, 30, 5, &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
        let b = build_queue(3, 30, 5, &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
        assert_eq!(a, b);
        let mut s = a.clone();
        s.sort_unstable();
        s.dedup();
        assert_eq!(s.len(), 5);
        assert!(!a.contains(&3));
        assert!(a.iter().all(|&p| p < 30));
    }

    #[test]
    fn oversized_queue_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(build_queue(0, 30, 30, &mut rng), Err(Error::Config(_))));
        assert!(build_queue(0, 1, 1, &mut rng).is_err());
    }

    #[test]
    fn peers_are_selected_uniformly() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let mut hits = [0usize; 30];
        let draws = 10_000;
        for _ in 0..draws {
            for p in build_queue(7, 30, 5, &mut rng).unwrap() {
                hits[p] += 1;
            }
        }
        assert_eq!(hits[7], 0);
        for (p, &h) in hits.iter().enumerate().filter(|(p, _)| *p != 7) {
            let freq = h as f64 / draws as f64;
            assert!((freq - 5.0 / 29.0).abs() <= 0.02, "peer {p}: {freq}");
        }
    }
}
