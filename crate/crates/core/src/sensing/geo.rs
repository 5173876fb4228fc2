//! Planar geometry under the equirectangular approximation.

/// Mean Earth radius in meters.
pub const EARTH_RADIUS_M: f64 = 6_371_008.8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatLon {
    pub lat: f64,
    pub lon: f64,
}

impl LatLon {
    pub fn new(lat: f64, lon: f64) -> Self {
        Self { lat, lon }
    }
}

/// Equirectangular distance in meters, using the mean latitude of the pair for the
/// longitude scale.
pub fn distance(a: LatLon, b: LatLon) -> f64 {
    let phi = ((a.lat + b.lat) / 2.0).to_radians();
    let x = (b.lon - a.lon).to_radians() * phi.cos();
    let y = (b.lat - a.lat).to_radians();
    EARTH_RADIUS_M * x.hypot(y)
}

/// RMS distance of `points` from their centroid. Zero for a single point.
pub fn radius_of_gyration(points: &[LatLon]) -> f64 {
    if points.is_empty() {
        return 0.0;
    }
    let n = points.len() as f64;
    let lat0 = points.iter().map(|p| p.lat).sum::<f64>() / n;
    let lon0 = points.iter().map(|p| p.lon).sum::<f64>() / n;
    let scale = lat0.to_radians().cos();
    let ms = points
        .iter()
        .map(|p| {
            let x = (p.lon - lon0).to_radians() * scale;
            let y = (p.lat - lat0).to_radians();
            x * x + y * y
        })
        .sum::<f64>()
        / n;
    EARTH_RADIUS_M * ms.sqrt()
}

/// Medoid: the point minimizing the summed distance to all others. `points` are in
/// timestamp order, so the first minimizer is the earliest.
pub fn centermost_point(points: &[LatLon]) -> Option<LatLon> {
    let mut best: Option<(f64, LatLon)> = None;
    for &p in points {
        let total: f64 = points.iter().map(|&q| distance(p, q)).sum();
        if best.is_none_or(|(b, _)| total < b) {
            best = Some((total, p));
        }
    }
    best.map(|(_, p)| p)
}

/// Path length over consecutive points.
pub fn total_distance(points: &[LatLon]) -> f64 {
    points.windows(2).fold(0.0, |acc, w| acc + distance(w[0], w[1]))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_point_has_zero_gyration() {
        assert_eq!(radius_of_gyration(&[LatLon::new(46.0, 11.0)]), 0.0);
    }

    #[test]
    fn two_points_two_meters_apart_on_a_meridian() {
        let dlat = (2.0 / EARTH_RADIUS_M).to_degrees();
        let pts = [LatLon::new(46.0, 11.0), LatLon::new(46.0 + dlat, 11.0)];
        assert!((radius_of_gyration(&pts) - 1.0).abs() < 1e-9);
        assert!((distance(pts[0], pts[1]) - 2.0).abs() < 1e-9);
    }

    #[test]
    fn medoid_of_collinear_points_is_the_middle() {
        let pts = [LatLon::new(0.0, 0.0), LatLon::new(0.0, 0.001), LatLon::new(0.0, 0.002)];
        assert_eq!(centermost_point(&pts), Some(pts[1]));
        assert_eq!(centermost_point(&pts[..1]), Some(pts[0]));
    }

    #[test]
    fn medoid_ties_go_to_the_earliest_point() {
        let pts = [LatLon::new(0.0, 0.0), LatLon::new(0.0, 0.001)];
        assert_eq!(centermost_point(&pts), Some(pts[0]));
    }
}
