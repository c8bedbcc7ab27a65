//! Hand-rolled SVG charts. Self-contained documents: inline styling,
//! generic font family, no scripts or external assets, so a report
//! directory can be copied or mailed as-is.

use std::fmt::Write;

const W: f64 = 720.0;
const H: f64 = 440.0;
const LEFT: f64 = 78.0;
const RIGHT: f64 = 24.0;
const TOP: f64 = 46.0;
const BOTTOM: f64 = 86.0;

const REAL_COLOR: &str = "#4878a8";
const SYNTH_COLOR: &str = "#d1605e";

fn fmt_num(v: f64) -> String {
    if v == 0.0 {
        return "0".to_string();
    }
    let a = v.abs();
    if !(1e-3..1e7).contains(&a) {
        return format!("{v:.2e}");
    }
    let s = format!("{v:.3}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    s.to_string()
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn document(body: &str, title: &str) -> String {
    format!(
        concat!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" ",
            "viewBox=\"0 0 {w} {h}\" font-family=\"sans-serif\" font-size=\"12\">\n",
            "<rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>\n",
            "<text x=\"{cx}\" y=\"24\" text-anchor=\"middle\" font-size=\"15\">{title}</text>\n",
            "{body}</svg>\n"
        ),
        w = W,
        h = H,
        cx = W / 2.0,
        title = escape(title),
        body = body,
    )
}

fn legend(body: &mut String, real_label: &str, synth_label: &str) {
    let x = W - RIGHT - 150.0;
    let _ = write!(
        body,
        "<rect x=\"{x}\" y=\"{y}\" width=\"11\" height=\"11\" fill=\"{REAL_COLOR}\"/>\
         <text x=\"{tx}\" y=\"{ty}\">{rl}</text>\n\
         <rect x=\"{x}\" y=\"{y2}\" width=\"11\" height=\"11\" fill=\"{SYNTH_COLOR}\"/>\
         <text x=\"{tx}\" y=\"{ty2}\">{sl}</text>\n",
        x = x,
        y = TOP,
        y2 = TOP + 17.0,
        tx = x + 16.0,
        ty = TOP + 10.0,
        ty2 = TOP + 27.0,
        rl = escape(real_label),
        sl = escape(synth_label),
    );
}

/// Paired bar chart of two series over shared categories.
pub fn grouped_bars(
    title: &str,
    y_label: &str,
    categories: &[String],
    real: &[f64],
    synth: &[f64],
) -> String {
    assert_eq!(categories.len(), real.len());
    assert_eq!(categories.len(), synth.len());
    let plot_w = W - LEFT - RIGHT;
    let plot_h = H - TOP - BOTTOM;
    let max = real
        .iter()
        .chain(synth)
        .fold(0.0f64, |m, v| m.max(*v))
        .max(1e-12)
        * 1.05;
    let n = categories.len().max(1);
    let slot = plot_w / n as f64;
    let bar = (slot * 0.4).min(26.0);

    let mut body = String::new();
    // y axis with 5 ticks
    for i in 0..=5 {
        let v = max * i as f64 / 5.0;
        let y = TOP + plot_h - plot_h * i as f64 / 5.0;
        let _ = write!(
            body,
            "<line x1=\"{x1}\" y1=\"{y}\" x2=\"{x2}\" y2=\"{y}\" stroke=\"#ddd\"/>\
             <text x=\"{tx}\" y=\"{ty}\" text-anchor=\"end\">{label}</text>\n",
            x1 = LEFT,
            x2 = W - RIGHT,
            y = y,
            tx = LEFT - 6.0,
            ty = y + 4.0,
            label = fmt_num(v),
        );
    }
    // bars
    for (i, cat) in categories.iter().enumerate() {
        let cx = LEFT + slot * (i as f64 + 0.5);
        for (v, color, off) in [(real[i], REAL_COLOR, -bar), (synth[i], SYNTH_COLOR, 0.0)] {
            let h = plot_h * (v / max);
            let _ = write!(
                body,
                "<rect x=\"{x}\" y=\"{y}\" width=\"{w}\" height=\"{h}\" fill=\"{color}\"/>\n",
                x = cx + off,
                y = TOP + plot_h - h,
                w = bar,
                h = h,
            );
        }
        // label every category up to 25, else every other one
        let step = n.div_ceil(25);
        if i % step == 0 {
            let _ = write!(
                body,
                "<text x=\"{cx}\" y=\"{ty}\" text-anchor=\"end\" \
                 transform=\"rotate(-40 {cx} {ty})\">{label}</text>\n",
                cx = cx,
                ty = TOP + plot_h + 14.0,
                label = escape(cat),
            );
        }
    }
    let _ = write!(
        body,
        "<line x1=\"{l}\" y1=\"{b}\" x2=\"{r}\" y2=\"{b}\" stroke=\"black\"/>\
         <line x1=\"{l}\" y1=\"{t}\" x2=\"{l}\" y2=\"{b}\" stroke=\"black\"/>\n\
         <text x=\"16\" y=\"{my}\" transform=\"rotate(-90 16 {my})\" text-anchor=\"middle\">{yl}</text>\n",
        l = LEFT,
        r = W - RIGHT,
        t = TOP,
        b = TOP + plot_h,
        my = TOP + plot_h / 2.0,
        yl = escape(y_label),
    );
    legend(&mut body, "real", "synthetic");
    document(&body, title)
}

/// Quantile-quantile scatter with the identity reference line.
pub fn qq_scatter(title: &str, x_label: &str, y_label: &str, points: &[(f64, f64)]) -> String {
    let plot_w = W - LEFT - RIGHT;
    let plot_h = H - TOP - BOTTOM;
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for (a, b) in points {
        lo = lo.min(*a).min(*b);
        hi = hi.max(*a).max(*b);
    }
    if !lo.is_finite() || !hi.is_finite() {
        lo = 0.0;
        hi = 1.0;
    }
    if hi - lo < 1e-12 {
        hi = lo + 1.0;
    }
    let pad = (hi - lo) * 0.05;
    let (lo, hi) = (lo - pad, hi + pad);
    let sx = |v: f64| LEFT + plot_w * (v - lo) / (hi - lo);
    let sy = |v: f64| TOP + plot_h - plot_h * (v - lo) / (hi - lo);

    let mut body = String::new();
    for i in 0..=5 {
        let v = lo + (hi - lo) * i as f64 / 5.0;
        let _ = write!(
            body,
            "<line x1=\"{x}\" y1=\"{t}\" x2=\"{x}\" y2=\"{b}\" stroke=\"#eee\"/>\
             <text x=\"{x}\" y=\"{xy}\" text-anchor=\"middle\">{lb}</text>\n\
             <line x1=\"{l}\" y1=\"{y}\" x2=\"{r}\" y2=\"{y}\" stroke=\"#eee\"/>\
             <text x=\"{ty}\" y=\"{yy}\" text-anchor=\"end\">{lb}</text>\n",
            x = sx(v),
            y = sy(v),
            t = TOP,
            b = TOP + plot_h,
            l = LEFT,
            r = W - RIGHT,
            xy = TOP + plot_h + 16.0,
            ty = LEFT - 6.0,
            yy = sy(v) + 4.0,
            lb = fmt_num(v),
        );
    }
    let _ = write!(
        body,
        "<line x1=\"{x1}\" y1=\"{y1}\" x2=\"{x2}\" y2=\"{y2}\" stroke=\"#888\" stroke-dasharray=\"5,4\"/>\n",
        x1 = sx(lo),
        y1 = sy(lo),
        x2 = sx(hi),
        y2 = sy(hi),
    );
    for (a, b) in points {
        let _ = write!(
            body,
            "<circle cx=\"{x}\" cy=\"{y}\" r=\"3\" fill=\"{c}\" fill-opacity=\"0.75\"/>\n",
            x = sx(*a),
            y = sy(*b),
            c = REAL_COLOR,
        );
    }
    let _ = write!(
        body,
        "<line x1=\"{l}\" y1=\"{b}\" x2=\"{r}\" y2=\"{b}\" stroke=\"black\"/>\
         <line x1=\"{l}\" y1=\"{t}\" x2=\"{l}\" y2=\"{b}\" stroke=\"black\"/>\n\
         <text x=\"{mx}\" y=\"{bx}\" text-anchor=\"middle\">{xl}</text>\n\
         <text x=\"16\" y=\"{my}\" transform=\"rotate(-90 16 {my})\" text-anchor=\"middle\">{yl}</text>\n",
        l = LEFT,
        r = W - RIGHT,
        t = TOP,
        b = TOP + plot_h,
        mx = LEFT + plot_w / 2.0,
        bx = TOP + plot_h + 40.0,
        my = TOP + plot_h / 2.0,
        xl = escape(x_label),
        yl = escape(y_label),
    );
    document(&body, title)
}
