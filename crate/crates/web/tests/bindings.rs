use rofdecide_web::{eye_trace_len, eye_traces, sign_dot, threshold_curve};

#[test]
fn eye_traces_are_centred_on_symbols() {
    let len = eye_trace_len(4);
    let v = eye_traces("d10km", f64::INFINITY, 50, 1).unwrap();
    assert_eq!(v.len(), 50 * len);
    // Noise-free and mild ISI: every centre sample is clearly away from zero.
    assert!(v.chunks(len).all(|t| t[len / 2].abs() > 0.5));
    assert!(eye_traces("d99km", -18.0, 10, 1).is_err());
}

#[test]
fn threshold_curve_covers_the_grid() {
    let c = threshold_curve("d15km", 20_000, 3).unwrap();
    assert_eq!(c.len(), 16);
    assert_eq!(c[0], -19.5);
    assert!(c[1] > c[15], "{c:?}");
}

#[test]
fn sign_dot_agrees_with_packed_kernel() {
    assert_eq!(sign_dot("++-+", "+--+").unwrap(), vec![2, 2, 3]);
    let a: String = (0..200).map(|i| if i % 3 == 0 { '+' } else { '-' }).collect();
    let b: String = (0..200).map(|i| if i % 7 < 4 { '+' } else { '-' }).collect();
    let r = sign_dot(&a, &b).unwrap();
    assert_eq!(r[0], r[1]);
    assert!(sign_dot("++", "+").is_err());
    assert!(sign_dot("+x", "++").is_err());
}
