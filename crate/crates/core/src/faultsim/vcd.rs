use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use crate::netlist::Netlist;

use super::GoldenTrace;

/// Half period of the emitted clock, in `$timescale` units.
const HALF_PERIOD: u64 = 5;

/// Identifier code for the `index`-th variable: base-94 over `!`..`~`.
fn id_code(mut index: usize) -> String {
    let mut code = String::new();
    loop {
        code.push((b'!' + (index % 94) as u8) as char);
        index /= 94;
        if index == 0 {
            break;
        }
        index -= 1;
    }
    code
}

/// Hierarchical VCD name under which [`write_vcd`] dumps flip-flop `ff_name`.
pub fn default_vcd_name(netlist: &Netlist, ff_name: &str) -> String {
    format!("{}.ff.{}", netlist.name(), ff_name)
}

/// Writes a golden trace as VCD.
///
/// Layout: scope `<netlist>` holds the clock and sub-scopes `in`, `ff`, `out`.
/// Cycle `c` has its rising clock edge at time `10c + 5`; every signal takes
/// its cycle-`c` value at that same timestamp. Only changes are emitted.
pub fn write_vcd<W: Write>(trace: &GoldenTrace, netlist: &Netlist, out: &mut W) -> io::Result<()> {
    let ff_names = netlist.flip_flop_names();
    let n_pi = netlist.inputs().len();
    let n_ff = ff_names.len();
    let clk = id_code(0);
    let pi_code = |i: usize| id_code(1 + i);
    let ff_code = |i: usize| id_code(1 + n_pi + i);
    let po_code = |i: usize| id_code(1 + n_pi + n_ff + i);

    writeln!(out, "$version seugnn {} $end", env!("CARGO_PKG_VERSION"))?;
    writeln!(out, "$timescale 1ns $end")?;
    writeln!(out, "$scope module {} $end", netlist.name())?;
    writeln!(out, "$var wire 1 {clk} {} $end", netlist.clock())?;
    writeln!(out, "$scope module in $end")?;
    for (i, &net) in netlist.inputs().iter().enumerate() {
        writeln!(out, "$var wire 1 {} {} $end", pi_code(i), netlist.net_name(net))?;
    }
    writeln!(out, "$upscope $end")?;
    writeln!(out, "$scope module ff $end")?;
    for (i, name) in ff_names.iter().enumerate() {
        writeln!(out, "$var reg 1 {} {} $end", ff_code(i), name)?;
    }
    writeln!(out, "$upscope $end")?;
    writeln!(out, "$scope module out $end")?;
    for (i, &net) in netlist.outputs().iter().enumerate() {
        writeln!(out, "$var wire 1 {} {} $end", po_code(i), netlist.net_name(net))?;
    }
    writeln!(out, "$upscope $end")?;
    writeln!(out, "$upscope $end")?;
    writeln!(out, "$enddefinitions $end")?;

    let cycles = trace.ff.rows();
    let bit = |b: bool| if b { '1' } else { '0' };
    let groups: [(&crate::bits::BitMatrix, &dyn Fn(usize) -> String); 3] =
        [(&trace.pi, &pi_code), (&trace.ff, &ff_code), (&trace.po, &po_code)];

    writeln!(out, "#0")?;
    writeln!(out, "$dumpvars")?;
    writeln!(out, "0{clk}")?;
    if cycles > 0 {
        for (m, code) in &groups {
            for i in 0..m.cols() {
                writeln!(out, "{}{}", bit(m.get(0, i)), code(i))?;
            }
        }
    }
    writeln!(out, "$end")?;

    for c in 0..cycles {
        writeln!(out, "#{}", 2 * HALF_PERIOD * c as u64 + HALF_PERIOD)?;
        writeln!(out, "1{clk}")?;
        if c > 0 {
            for (m, code) in &groups {
                for i in 0..m.cols() {
                    if m.get(c, i) != m.get(c - 1, i) {
                        writeln!(out, "{}{}", bit(m.get(c, i)), code(i))?;
                    }
                }
            }
        }
        writeln!(out, "#{}", 2 * HALF_PERIOD * (c as u64 + 1))?;
        writeln!(out, "0{clk}")?;
    }
    Ok(())
}

pub fn write_vcd_file(trace: &GoldenTrace, netlist: &Netlist, path: &Path) -> io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_vcd(trace, netlist, &mut w)?;
    w.flush()
}
