use std::collections::{HashMap, VecDeque};
use std::io::Read;
use std::path::Path;

use crate::bits::BitMatrix;

use super::{NameMap, WaveMatrix, WaveformError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Level {
    Zero,
    One,
    Unknown,
}

struct Tokens<'a> {
    iter: std::iter::Peekable<std::str::Lines<'a>>,
    line: usize,
    pending: VecDeque<&'a str>,
}

impl<'a> Tokens<'a> {
    fn new(text: &'a str) -> Self {
        Tokens {
            iter: text.lines().peekable(),
            line: 0,
            pending: VecDeque::new(),
        }
    }

    fn next(&mut self) -> Option<&'a str> {
        while self.pending.is_empty() {
            let l = self.iter.next()?;
            self.line += 1;
            self.pending.extend(l.split_whitespace());
        }
        self.pending.pop_front()
    }

    fn err(&self, msg: impl Into<String>) -> WaveformError {
        WaveformError::VcdSyntax {
            line: self.line,
            msg: msg.into(),
        }
    }

    /// Collects tokens up to the closing `$end`.
    fn until_end(&mut self, what: &str) -> Result<Vec<&'a str>, WaveformError> {
        let mut out = Vec::new();
        loop {
            match self.next() {
                Some("$end") => return Ok(out),
                Some(t) => out.push(t),
                None => return Err(self.err(format!("unterminated {what}"))),
            }
        }
    }
}

struct VarDecl {
    width: usize,
    code: String,
}

/// Parses the supported VCD subset and samples the mapped flip-flops at each
/// rising edge of `clock` (a hierarchical name such as `top.clk`).
///
/// A rising edge is a 0→1 change of the clock between two timestamps. With
/// `sample_offset = 0` the values are the settled ones at the edge timestamp;
/// otherwise they are the values current at `edge + sample_offset`.
pub fn parse_vcd_str(
    text: &str,
    clock: &str,
    names: &NameMap,
    sample_offset: u64,
) -> Result<WaveMatrix, WaveformError> {
    let mut tok = Tokens::new(text);
    let mut scope: Vec<&str> = Vec::new();
    let mut vars: HashMap<String, VarDecl> = HashMap::new();

    loop {
        let Some(t) = tok.next() else {
            return Err(tok.err("missing $enddefinitions"));
        };
        match t {
            "$date" | "$version" | "$comment" | "$timescale" => {
                tok.until_end(t)?;
            }
            "$scope" => {
                let body = tok.until_end("$scope")?;
                match body.as_slice() {
                    [_kind, name] => scope.push(name),
                    _ => return Err(tok.err("malformed $scope")),
                }
            }
            "$upscope" => {
                tok.until_end("$upscope")?;
                if scope.pop().is_none() {
                    return Err(tok.err("$upscope without open scope"));
                }
            }
            "$var" => {
                let body = tok.until_end("$var")?;
                if body.len() < 4 {
                    return Err(tok.err("malformed $var"));
                }
                let width: usize = body[1]
                    .parse()
                    .map_err(|_| tok.err(format!("bad width `{}`", body[1])))?;
                // `name [3:0]` splits the range into its own token.
                let reference: String = body[3..].concat();
                let mut full = scope.join(".");
                if !full.is_empty() {
                    full.push('.');
                }
                full.push_str(&reference);
                vars.insert(
                    full,
                    VarDecl {
                        width,
                        code: body[2].to_string(),
                    },
                );
            }
            "$enddefinitions" => {
                tok.until_end(t)?;
                break;
            }
            other => return Err(tok.err(format!("unexpected `{other}` in header"))),
        }
    }

    let lookup = |name: &str| -> Result<&VarDecl, WaveformError> {
        let v = vars
            .get(name)
            .ok_or_else(|| WaveformError::MissingSignal(name.to_string()))?;
        if v.width != 1 {
            return Err(WaveformError::NotScalar {
                name: name.to_string(),
                width: v.width,
            });
        }
        Ok(v)
    };

    // Tracked slot 0 is the clock; slots 1.. are flip-flops in node order.
    let mut slots_of_code: HashMap<&str, Vec<usize>> = HashMap::new();
    slots_of_code.entry(lookup(clock)?.code.as_str()).or_default().push(0);
    for (i, (_, vcd_name)) in names.entries().iter().enumerate() {
        slots_of_code
            .entry(lookup(vcd_name)?.code.as_str())
            .or_default()
            .push(i + 1);
    }
    let n = names.entries().len();
    let mut level = vec![Level::Unknown; n + 1];
    let mut values = BitMatrix::zeros(0, n);
    let mut row = vec![false; n];

    let mut now: Option<u64> = None;
    let mut clk_at_close = Level::Unknown;
    let mut deadlines: VecDeque<u64> = VecDeque::new();

    let snapshot = |level: &[Level], time: u64, row: &mut Vec<bool>, values: &mut BitMatrix| -> Result<(), WaveformError> {
        for (i, l) in level[1..].iter().enumerate() {
            row[i] = match l {
                Level::Zero => false,
                Level::One => true,
                Level::Unknown => {
                    return Err(WaveformError::NonBinaryValue {
                        signal: names.entries()[i].1.clone(),
                        time,
                    })
                }
            };
        }
        values.push_row(row);
        Ok(())
    };

    // Closes the current timestamp; `next` is the upcoming one (None at EOF).
    let close = |now: Option<u64>,
                     next: Option<u64>,
                     level: &[Level],
                     clk_at_close: &mut Level,
                     deadlines: &mut VecDeque<u64>,
                     row: &mut Vec<bool>,
                     values: &mut BitMatrix|
     -> Result<(), WaveformError> {
        let Some(t) = now else { return Ok(()) };
        if *clk_at_close == Level::Zero && level[0] == Level::One {
            deadlines.push_back(t + sample_offset);
        }
        *clk_at_close = level[0];
        while let Some(&d) = deadlines.front() {
            if next.is_some_and(|nx| nx <= d) {
                break;
            }
            deadlines.pop_front();
            snapshot(level, d, row, values)?;
        }
        Ok(())
    };

    let set = |code: &str, l: Level, level: &mut Vec<Level>| {
        if let Some(slots) = slots_of_code.get(code) {
            for &s in slots {
                level[s] = l;
            }
        }
    };

    while let Some(t) = tok.next() {
        let first = t.as_bytes()[0];
        match first {
            b'#' => {
                let time: u64 = t[1..]
                    .parse()
                    .map_err(|_| tok.err(format!("bad timestamp `{t}`")))?;
                if now.is_some_and(|p| time < p) {
                    return Err(tok.err("timestamps must not decrease"));
                }
                if now != Some(time) {
                    close(now, Some(time), &level, &mut clk_at_close, &mut deadlines, &mut row, &mut values)?;
                    now = Some(time);
                }
            }
            b'$' => match t {
                "$dumpvars" | "$dumpall" | "$dumpon" | "$dumpoff" | "$end" => {}
                "$comment" => {
                    tok.until_end(t)?;
                }
                other => return Err(tok.err(format!("unsupported command `{other}`"))),
            },
            b'0' | b'1' | b'x' | b'X' | b'z' | b'Z' => {
                if t.len() < 2 {
                    return Err(tok.err(format!("value change `{t}` has no identifier")));
                }
                let l = match first {
                    b'0' => Level::Zero,
                    b'1' => Level::One,
                    _ => Level::Unknown,
                };
                set(&t[1..], l, &mut level);
            }
            b'b' | b'B' => {
                let code = tok.next().ok_or_else(|| tok.err("vector change without identifier"))?;
                let bits = &t[1..];
                if bits.is_empty() {
                    return Err(tok.err("empty vector value"));
                }
                if slots_of_code.contains_key(code) {
                    // Tracked signals are single-bit; the last digit is the value.
                    let l = match bits.as_bytes()[bits.len() - 1] {
                        b'0' => Level::Zero,
                        b'1' => Level::One,
                        _ => Level::Unknown,
                    };
                    set(code, l, &mut level);
                }
            }
            b'r' | b'R' => {
                tok.next().ok_or_else(|| tok.err("real change without identifier"))?;
            }
            _ => return Err(tok.err(format!("unexpected token `{t}`"))),
        }
    }
    close(now, None, &level, &mut clk_at_close, &mut deadlines, &mut row, &mut values)?;

    Ok(WaveMatrix {
        ff_names: names.entries().iter().map(|(n, _)| n.clone()).collect(),
        values,
        clock_name: clock.to_string(),
    })
}

pub fn parse_vcd<R: Read>(mut reader: R, clock: &str, names: &NameMap, sample_offset: u64) -> Result<WaveMatrix, WaveformError> {
    let mut text = String::new();
    reader
        .read_to_string(&mut text)
        .map_err(|e| WaveformError::Io(e.to_string()))?;
    parse_vcd_str(&text, clock, names, sample_offset)
}

pub fn parse_vcd_file(path: &Path, clock: &str, names: &NameMap, sample_offset: u64) -> Result<WaveMatrix, WaveformError> {
    let file = std::fs::File::open(path).map_err(|e| WaveformError::Io(format!("{}: {e}", path.display())))?;
    parse_vcd(std::io::BufReader::new(file), clock, names, sample_offset)
}

#[cfg(test)]
mod tests {
    use super::*;

    const FIXTURE: &str = "\
$timescale 1ns $end
$scope module top $end
$var wire 1 ! clk $end
$var reg 1 a r1 $end
$var reg 1 b r2 $end
$upscope $end
$enddefinitions $end
#0
0! 0a 1b
#5
1!
#10
0! 1a
#15
1! 0b
#20
0!
#25
1! 0a 1b
";

    fn names() -> NameMap {
        NameMap::from_pairs(vec![("r1".into(), "top.r1".into()), ("r2".into(), "top.r2".into())])
    }

    #[test]
    fn hand_decoded_fixture() {
        let w = parse_vcd_str(FIXTURE, "top.clk", &names(), 0).unwrap();
        let rows: Vec<Vec<bool>> = (0..w.cycles()).map(|c| w.values.row(c).to_vec()).collect();
        assert_eq!(rows, vec![vec![false, true], vec![true, false], vec![false, true]]);
    }

    #[test]
    fn sample_offset_delays_sampling() {
        // Sampling 5 units after each edge sees the values of the falling-edge timestamp.
        let w = parse_vcd_str(FIXTURE, "top.clk", &names(), 5).unwrap();
        let rows: Vec<Vec<bool>> = (0..w.cycles()).map(|c| w.values.row(c).to_vec()).collect();
        assert_eq!(rows, vec![vec![true, true], vec![true, false], vec![false, true]]);
    }

    #[test]
    fn unknown_value_rejected() {
        let text = FIXTURE.replace("1! 0b", "1! bx b");
        assert!(matches!(
            parse_vcd_str(&text, "top.clk", &names(), 0),
            Err(WaveformError::NonBinaryValue { time: 15, .. })
        ));
    }

    #[test]
    fn missing_signal_and_syntax() {
        let bad = NameMap::from_pairs(vec![("r3".into(), "top.r3".into())]);
        assert_eq!(
            parse_vcd_str(FIXTURE, "top.clk", &bad, 0).unwrap_err(),
            WaveformError::MissingSignal("top.r3".into())
        );
        let text = FIXTURE.replace("#15", "@15");
        assert!(matches!(
            parse_vcd_str(&text, "top.clk", &names(), 0),
            Err(WaveformError::VcdSyntax { line: 14, .. })
        ));
    }

    #[test]
    fn vector_var_rejected_for_flip_flop() {
        let text = FIXTURE.replace("$var reg 1 b r2 $end", "$var reg 4 b r2 [3:0] $end");
        let names = NameMap::from_pairs(vec![("r2".into(), "top.r2[3:0]".into())]);
        assert!(matches!(
            parse_vcd_str(&text, "top.clk", &names, 0),
            Err(WaveformError::NotScalar { width: 4, .. })
        ));
    }
}
