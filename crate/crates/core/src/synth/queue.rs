//! Multi-server FIFO queue over integer-second times.

/// Service record for one customer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Served {
    pub start: i64,
    pub departure: i64,
    pub server: usize,
}

/// Serves customers in order of `arrivals` (ties by input index) on
/// `servers` identical servers; each takes the server that frees first,
/// lowest index on ties. Returns records in input order.
pub fn serve(arrivals: &[i64], service: &[i64], servers: usize) -> Vec<Served> {
    assert_eq!(arrivals.len(), service.len());
    assert!(servers > 0);
    let mut order: Vec<usize> = (0..arrivals.len()).collect();
    order.sort_by_key(|&i| (arrivals[i], i));
    let mut free = vec![i64::MIN; servers];
    let mut out = vec![
        Served {
            start: 0,
            departure: 0,
            server: 0
        };
        arrivals.len()
    ];
    for i in order {
        let (server, &at) = free
            .iter()
            .enumerate()
            .min_by_key(|&(k, t)| (*t, k))
            .expect("at least one server");
        let start = arrivals[i].max(at);
        let departure = start + service[i];
        free[server] = departure;
        out[i] = Served {
            start,
            departure,
            server,
        };
    }
    out
}

/// Customers who have arrived by `t` but not yet departed.
pub fn in_system_at(arrivals: &[i64], served: &[Served], t: i64) -> usize {
    arrivals
        .iter()
        .zip(served)
        .filter(|(a, s)| **a <= t && s.departure > t)
        .count()
}
