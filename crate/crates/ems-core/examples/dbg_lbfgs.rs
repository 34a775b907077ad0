fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn main() {
    let obj = |x: &[f64]| {
        let (a, b) = (x[0], x[1]);
        let f = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
        let g = vec![
            -2.0 * (1.0 - a) - 400.0 * a * (b - a * a),
            200.0 * (b - a * a),
        ];
        (f, g)
    };

    let mut x = vec![-1.2, 1.0];
    let (mut f, mut g) = obj(&x);
    let mut s_hist: Vec<Vec<f64>> = Vec::new();
    let mut y_hist: Vec<Vec<f64>> = Vec::new();
    let n = 2;

    for iter in 0..60 {
        let mut dir = g.clone();
        let k = s_hist.len();
        let mut alphas = vec![0.0; k];
        for i in (0..k).rev() {
            let rho = 1.0 / dot(&y_hist[i], &s_hist[i]);
            let a = rho * dot(&s_hist[i], &dir);
            alphas[i] = a;
            for j in 0..n {
                dir[j] -= a * y_hist[i][j];
            }
        }
        if k > 0 {
            let gamma = dot(&s_hist[k - 1], &y_hist[k - 1]) / dot(&y_hist[k - 1], &y_hist[k - 1]);
            for d in dir.iter_mut() {
                *d *= gamma;
            }
        }
        for i in 0..k {
            let rho = 1.0 / dot(&y_hist[i], &s_hist[i]);
            let b = rho * dot(&y_hist[i], &dir);
            for j in 0..n {
                dir[j] += s_hist[i][j] * (alphas[i] - b);
            }
        }
        for d in dir.iter_mut() {
            *d = -*d;
        }
        let slope = dot(&g, &dir);

        let mut step = 1.0;
        let mut accepted = None;
        let mut backtracks = 0;
        for _ in 0..30 {
            let trial: Vec<f64> = x.iter().zip(&dir).map(|(xi, di)| xi + step * di).collect();
            let (f_trial, g_trial) = obj(&trial);
            if f_trial.is_finite() && f_trial <= f + 1e-4 * step * slope {
                accepted = Some((trial, f_trial, g_trial));
                break;
            }
            step *= 0.5;
            backtracks += 1;
        }
        let Some((x_new, f_new, g_new)) = accepted else {
            println!("iter {iter}: line search failed, f={f:.6}");
            break;
        };
        println!(
            "iter {iter}: f={f:.6} -> {f_new:.6} step={step:.3e} bt={backtracks} slope={slope:.3e} |dir|={:.3e} k={k}",
            dir.iter().fold(0.0f64, |m, v| m.max(v.abs()))
        );
        let s: Vec<f64> = x_new.iter().zip(x.iter()).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        println!("    sy={:.3e}", dot(&s, &y));
        if dot(&s, &y) > 1e-12 {
            s_hist.push(s);
            y_hist.push(y);
            if s_hist.len() > 7 {
                s_hist.remove(0);
                y_hist.remove(0);
            }
        }
        x = x_new;
        g = g_new;
        f = f_new;
    }
    println!("final f={f} x={x:?}");
}
