//! Grid arguments: `start:stop:step` (inclusive) or a comma separated list.

use std::str::FromStr;

#[derive(Debug, Clone, PartialEq)]
pub struct Grid1d(pub Vec<f64>);

const MAX_POINTS: usize = 1_000_000;

fn number(s: &str) -> Result<f64, String> {
    let v: f64 = s
        .trim()
        .parse()
        .map_err(|_| format!("'{s}' is not a number"))?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(format!("'{s}' is not finite"))
    }
}

/// Strip the last-bit noise of `start + i * step`.
fn tidy(v: f64) -> f64 {
    (v * 1e12).round() / 1e12
}

impl FromStr for Grid1d {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let parts: Vec<&str> = s.split(':').collect();
        let values = match parts.as_slice() {
            [start, stop, step] => {
                let (a, b, h) = (number(start)?, number(stop)?, number(step)?);
                if h <= 0.0 {
                    return Err(format!("step must be positive, got {h}"));
                }
                if b < a {
                    return Err(format!("range {a}:{b} is descending"));
                }
                let n = ((b - a) / h + 1e-9).floor();
                if n >= MAX_POINTS as f64 {
                    return Err(format!("range has more than {MAX_POINTS} points"));
                }
                (0..=n as usize).map(|i| tidy(a + i as f64 * h)).collect()
            }
            [list] => list
                .split(',')
                .map(number)
                .collect::<Result<Vec<f64>, String>>()?,
            _ => return Err(format!("'{s}' is neither start:stop:step nor a list")),
        };
        if values.windows(2).any(|w| w[1] <= w[0]) {
            return Err("grid values must be strictly ascending".into());
        }
        Ok(Grid1d(values))
    }
}

/// `WxH`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Size {
    pub width: usize,
    pub height: usize,
}

impl FromStr for Size {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let (w, h) = s
            .split_once('x')
            .ok_or_else(|| format!("'{s}' is not WxH"))?;
        let parse = |v: &str| {
            v.parse::<usize>()
                .ok()
                .filter(|&n| n > 0)
                .ok_or_else(|| format!("'{v}' is not a positive integer"))
        };
        Ok(Size {
            width: parse(w)?,
            height: parse(h)?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inclusive_range() {
        let g: Grid1d = "0.05:0.9:0.05".parse().unwrap();
        assert_eq!(g.0.len(), 18);
        assert_eq!(g.0[2], 0.15);
        assert_eq!(*g.0.last().unwrap(), 0.9);
    }

    #[test]
    fn list_and_single() {
        assert_eq!("0".parse::<Grid1d>().unwrap().0, vec![0.0]);
        assert_eq!("1,2.5".parse::<Grid1d>().unwrap().0, vec![1.0, 2.5]);
    }

    #[test]
    fn rejects_bad_grids() {
        for s in [
            "1:0:0.1",
            "0:1:0",
            "0:1:-1",
            "a",
            "2,1",
            "0:1",
            "1,nan",
            "0:1e9:1e-9",
        ] {
            assert!(s.parse::<Grid1d>().is_err(), "{s}");
        }
    }

    #[test]
    fn sizes() {
        assert_eq!(
            "16x9".parse::<Size>().unwrap(),
            Size {
                width: 16,
                height: 9
            }
        );
        assert!("16".parse::<Size>().is_err());
        assert!("0x3".parse::<Size>().is_err());
    }
}
