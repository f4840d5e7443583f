//! Parses payoff expressions, evaluates them and shows syntax errors.
//!
//! `cargo run --example parse_payoff -- "sqrt(x^2 + y^2)" "x +"`

use tugwar::expr::parse;

fn main() {
    let mut args: Vec<String> = std::env::args().skip(1).collect();
    if args.is_empty() {
        args = vec!["min(x, 1 - y) / 2".into(), "sqrt(x^2 + y^2)".into(), "x + * y".into()];
    }
    for src in &args {
        match parse(src) {
            Ok(e) => match e.eval([0.3, 0.4]) {
                Ok(v) => println!("{src:>24} at (0.3, 0.4) = {v}"),
                Err(err) => println!("{src:>24}: {err}"),
            },
            Err(err) => {
                println!("{src:>24}: {err}");
                println!("{:>24}  {}^", "", " ".repeat(err.offset));
            }
        }
    }
}
