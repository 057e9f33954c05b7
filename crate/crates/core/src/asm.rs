//! Line-oriented assembly format: parser, label resolver, disassembler.
//!
//! One instruction per line, `OP dst, src...`; memory operands `[rN+imm]`;
//! labels `Name:`; directives `.data addr byte...`, `.entry label`,
//! `.mmio_base hex`. `;` starts a comment. Programs are stored as `.bss`
//! text files.
//!
//! The symbolic form ([`SymInst`]) is shared with the structured-loop
//! lowerer and the instrumenter: both emit symbolic items and run the same
//! resolver, so every code path producing a [`Program`] agrees on label
//! semantics.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use thiserror::Error;

use crate::ir::{
    pack_channel_config, Inst, IrError, MmioLayout, Program, Reg, NUM_REGS, VST_WIDTHS,
};

#[derive(Debug, Error, PartialEq, Eq)]
#[error("line {line}: {kind}")]
pub struct AsmError {
    pub line: usize,
    pub kind: AsmErrorKind,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AsmErrorKind {
    #[error("unknown mnemonic `{0}`")]
    UnknownMnemonic(String),
    #[error("undefined label `{0}`")]
    UndefinedLabel(String),
    #[error("duplicate label `{0}`")]
    DuplicateLabel(String),
    #[error("malformed operand: {0}")]
    MalformedOperand(String),
    #[error("register index {0} out of range (0..{NUM_REGS})")]
    RegisterOutOfRange(u8),
    #[error("VST width {0} not one of {VST_WIDTHS:?}")]
    InvalidVstWidth(u8),
    #[error("malformed directive: {0}")]
    BadDirective(String),
    #[error("{0}")]
    Ir(IrError),
}

fn err(line: usize, kind: AsmErrorKind) -> AsmError {
    AsmError { line, kind }
}

/// Immediate operand of `MOVI` in symbolic form.
#[derive(Clone, PartialEq, Eq, Debug)]
pub enum SymImm {
    Int(i64),
    /// Resolves to the instruction index of a label.
    LabelIndex(String),
    /// Resolves to the packed channel configuration word for a
    /// (target branch, loop end) label pair. Written `cfg(Target, End)`.
    ChannelConfig { target: String, end: String },
}

impl SymImm {
    pub fn int(v: i64) -> SymImm {
        SymImm::Int(v)
    }
}

/// Instruction with unresolved (named) branch targets and immediates.
#[derive(Clone, PartialEq, Eq, Debug)]
pub enum SymInst {
    Add { dst: Reg, lhs: Reg, rhs: Reg },
    Sub { dst: Reg, lhs: Reg, rhs: Reg },
    Mul { dst: Reg, lhs: Reg, rhs: Reg },
    Addi { dst: Reg, src: Reg, imm: i64 },
    Movi { dst: Reg, imm: SymImm },
    Mov { dst: Reg, src: Reg },
    CmpEq { dst: Reg, lhs: Reg, rhs: Reg },
    CmpLe { dst: Reg, lhs: Reg, rhs: Reg },
    CmpGe { dst: Reg, lhs: Reg, rhs: Reg },
    And { dst: Reg, lhs: Reg, rhs: Reg },
    Or { dst: Reg, lhs: Reg, rhs: Reg },
    Ld { dst: Reg, base: Reg, offset: i64 },
    St { src: Reg, base: Reg, offset: i64 },
    Vst { lane0: Reg, width: u8, base: Reg, offset: i64 },
    Bnz { cond: Reg, target: String },
    Bz { cond: Reg, target: String },
    Jmp { target: String },
    Halt,
}

impl SymInst {
    /// Register written, mirroring [`Inst::def`].
    pub fn def(&self) -> Option<Reg> {
        match self {
            SymInst::Add { dst, .. }
            | SymInst::Sub { dst, .. }
            | SymInst::Mul { dst, .. }
            | SymInst::Addi { dst, .. }
            | SymInst::Movi { dst, .. }
            | SymInst::Mov { dst, .. }
            | SymInst::CmpEq { dst, .. }
            | SymInst::CmpLe { dst, .. }
            | SymInst::CmpGe { dst, .. }
            | SymInst::And { dst, .. }
            | SymInst::Or { dst, .. }
            | SymInst::Ld { dst, .. } => Some(*dst),
            _ => None,
        }
    }

    /// Registers read, mirroring [`Inst::uses`].
    pub fn uses(&self) -> Vec<Reg> {
        match self {
            SymInst::Add { lhs, rhs, .. }
            | SymInst::Sub { lhs, rhs, .. }
            | SymInst::Mul { lhs, rhs, .. }
            | SymInst::CmpEq { lhs, rhs, .. }
            | SymInst::CmpLe { lhs, rhs, .. }
            | SymInst::CmpGe { lhs, rhs, .. }
            | SymInst::And { lhs, rhs, .. }
            | SymInst::Or { lhs, rhs, .. } => vec![*lhs, *rhs],
            SymInst::Addi { src, .. } | SymInst::Mov { src, .. } => vec![*src],
            SymInst::Movi { .. } | SymInst::Halt | SymInst::Jmp { .. } => vec![],
            SymInst::Ld { base, .. } => vec![*base],
            SymInst::St { src, base, .. } => vec![*src, *base],
            SymInst::Vst { lane0, width, base, .. } => {
                let mut regs: Vec<Reg> = (0..*width)
                    .filter_map(|i| Reg::new(lane0.index() as u8 + i).ok())
                    .collect();
                regs.push(*base);
                regs
            }
            SymInst::Bnz { cond, .. } | SymInst::Bz { cond, .. } => vec![*cond],
        }
    }

    pub fn is_conditional_branch(&self) -> bool {
        matches!(self, SymInst::Bnz { .. } | SymInst::Bz { .. })
    }
}

/// One source item: either a label binding or an instruction.
#[derive(Clone, PartialEq, Eq, Debug)]
pub enum AsmItem {
    Label(String),
    Inst(SymInst),
}

/// Parsed module, pre-resolution.
#[derive(Clone, Debug, Default)]
pub struct AsmModule {
    pub items: Vec<AsmItem>,
    pub entry: Option<String>,
    pub mmio_base: Option<u64>,
    pub data: BTreeMap<u64, u8>,
}

fn parse_int(tok: &str) -> Option<i64> {
    let tok = tok.trim();
    let (neg, body) = match tok.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, tok),
    };
    let v = if let Some(hex) = body.strip_prefix("0x").or_else(|| body.strip_prefix("0X")) {
        i64::from_str_radix(hex, 16).ok()?
    } else {
        body.parse::<i64>().ok()?
    };
    Some(if neg { -v } else { v })
}

fn parse_reg(tok: &str, line: usize) -> Result<Reg, AsmError> {
    let tok = tok.trim();
    let body = tok
        .strip_prefix('r')
        .or_else(|| tok.strip_prefix('R'))
        .ok_or_else(|| err(line, AsmErrorKind::MalformedOperand(format!("expected register, got `{tok}`"))))?;
    let n: u8 = body
        .parse()
        .map_err(|_| err(line, AsmErrorKind::MalformedOperand(format!("bad register `{tok}`"))))?;
    Reg::new(n).map_err(|_| err(line, AsmErrorKind::RegisterOutOfRange(n)))
}

/// Parse a `[rN+imm]`, `[rN-imm]` or `[rN]` memory operand.
fn parse_mem(tok: &str, line: usize) -> Result<(Reg, i64), AsmError> {
    let tok = tok.trim();
    let inner = tok
        .strip_prefix('[')
        .and_then(|s| s.strip_suffix(']'))
        .ok_or_else(|| err(line, AsmErrorKind::MalformedOperand(format!("expected [rN+imm], got `{tok}`"))))?;
    let split_at = inner[1..].find(['+', '-']).map(|i| i + 1);
    let (reg_part, off) = match split_at {
        Some(i) => {
            let off = parse_int(&inner[i..]).ok_or_else(|| {
                err(line, AsmErrorKind::MalformedOperand(format!("bad offset in `{tok}`")))
            })?;
            (&inner[..i], off)
        }
        None => (inner, 0),
    };
    Ok((parse_reg(reg_part, line)?, off))
}

fn is_label_name(tok: &str) -> bool {
    let mut chars = tok.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() || c == '_' || c == '.' => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '.')
}

fn parse_movi_imm(tok: &str, line: usize) -> Result<SymImm, AsmError> {
    let tok = tok.trim();
    if let Some(v) = parse_int(tok) {
        return Ok(SymImm::Int(v));
    }
    if let Some(inner) = tok.strip_prefix("cfg(").and_then(|s| s.strip_suffix(')')) {
        let mut parts = inner.splitn(2, ',');
        let target = parts.next().unwrap_or("").trim().to_string();
        let end = parts
            .next()
            .ok_or_else(|| err(line, AsmErrorKind::MalformedOperand(format!("cfg needs two labels: `{tok}`"))))?
            .trim()
            .to_string();
        return Ok(SymImm::ChannelConfig { target, end });
    }
    if is_label_name(tok) {
        return Ok(SymImm::LabelIndex(tok.to_string()));
    }
    Err(err(line, AsmErrorKind::MalformedOperand(format!("bad immediate `{tok}`"))))
}

fn split_operands(rest: &str) -> Vec<String> {
    // Commas inside `cfg(...)` don't separate operands.
    let mut out = Vec::new();
    let mut depth = 0usize;
    let mut cur = String::new();
    for c in rest.chars() {
        match c {
            '(' => {
                depth += 1;
                cur.push(c);
            }
            ')' => {
                depth = depth.saturating_sub(1);
                cur.push(c);
            }
            ',' if depth == 0 => {
                out.push(cur.trim().to_string());
                cur.clear();
            }
            _ => cur.push(c),
        }
    }
    if !cur.trim().is_empty() {
        out.push(cur.trim().to_string());
    }
    out
}

fn parse_inst(mnemonic: &str, rest: &str, line: usize) -> Result<SymInst, AsmError> {
    let ops = split_operands(rest);
    let want = |n: usize| -> Result<(), AsmError> {
        if ops.len() == n {
            Ok(())
        } else {
            Err(err(
                line,
                AsmErrorKind::MalformedOperand(format!(
                    "{mnemonic} takes {n} operands, got {}",
                    ops.len()
                )),
            ))
        }
    };
    let three_regs = |line: usize| -> Result<(Reg, Reg, Reg), AsmError> {
        want(3)?;
        Ok((parse_reg(&ops[0], line)?, parse_reg(&ops[1], line)?, parse_reg(&ops[2], line)?))
    };
    let upper = mnemonic.to_ascii_uppercase();
    let inst = match upper.as_str() {
        "ADD" => {
            let (dst, lhs, rhs) = three_regs(line)?;
            SymInst::Add { dst, lhs, rhs }
        }
        "SUB" => {
            let (dst, lhs, rhs) = three_regs(line)?;
            SymInst::Sub { dst, lhs, rhs }
        }
        "MUL" => {
            let (dst, lhs, rhs) = three_regs(line)?;
            SymInst::Mul { dst, lhs, rhs }
        }
        "CMP_EQ" => {
            let (dst, lhs, rhs) = three_regs(line)?;
            SymInst::CmpEq { dst, lhs, rhs }
        }
        "CMP_LE" => {
            let (dst, lhs, rhs) = three_regs(line)?;
            SymInst::CmpLe { dst, lhs, rhs }
        }
        "CMP_GE" => {
            let (dst, lhs, rhs) = three_regs(line)?;
            SymInst::CmpGe { dst, lhs, rhs }
        }
        "AND" => {
            let (dst, lhs, rhs) = three_regs(line)?;
            SymInst::And { dst, lhs, rhs }
        }
        "OR" => {
            let (dst, lhs, rhs) = three_regs(line)?;
            SymInst::Or { dst, lhs, rhs }
        }
        "ADDI" => {
            want(3)?;
            let imm = parse_int(&ops[2]).ok_or_else(|| {
                err(line, AsmErrorKind::MalformedOperand(format!("bad immediate `{}`", ops[2])))
            })?;
            SymInst::Addi { dst: parse_reg(&ops[0], line)?, src: parse_reg(&ops[1], line)?, imm }
        }
        "MOVI" => {
            want(2)?;
            SymInst::Movi { dst: parse_reg(&ops[0], line)?, imm: parse_movi_imm(&ops[1], line)? }
        }
        "MOV" => {
            want(2)?;
            SymInst::Mov { dst: parse_reg(&ops[0], line)?, src: parse_reg(&ops[1], line)? }
        }
        "LD" => {
            want(2)?;
            let (base, offset) = parse_mem(&ops[1], line)?;
            SymInst::Ld { dst: parse_reg(&ops[0], line)?, base, offset }
        }
        "ST" => {
            want(2)?;
            let (base, offset) = parse_mem(&ops[1], line)?;
            SymInst::St { src: parse_reg(&ops[0], line)?, base, offset }
        }
        "VST" => {
            want(3)?;
            let (base, offset) = parse_mem(&ops[1], line)?;
            let width = parse_int(&ops[2])
                .and_then(|v| u8::try_from(v).ok())
                .ok_or_else(|| {
                    err(line, AsmErrorKind::MalformedOperand(format!("bad width `{}`", ops[2])))
                })?;
            if !VST_WIDTHS.contains(&width) {
                return Err(err(line, AsmErrorKind::InvalidVstWidth(width)));
            }
            SymInst::Vst { lane0: parse_reg(&ops[0], line)?, width, base, offset }
        }
        "BNZ" => {
            want(2)?;
            SymInst::Bnz { cond: parse_reg(&ops[0], line)?, target: ops[1].clone() }
        }
        "BZ" => {
            want(2)?;
            SymInst::Bz { cond: parse_reg(&ops[0], line)?, target: ops[1].clone() }
        }
        "JMP" => {
            want(1)?;
            SymInst::Jmp { target: ops[0].clone() }
        }
        "HALT" => {
            want(0)?;
            SymInst::Halt
        }
        _ => return Err(err(line, AsmErrorKind::UnknownMnemonic(mnemonic.to_string()))),
    };
    Ok(inst)
}

fn parse_directive(line_text: &str, lineno: usize, module: &mut AsmModule) -> Result<(), AsmError> {
    let mut parts = line_text.split_whitespace();
    let head = parts.next().unwrap();
    match head {
        ".entry" => {
            let label = parts
                .next()
                .ok_or_else(|| err(lineno, AsmErrorKind::BadDirective(".entry needs a label".into())))?;
            module.entry = Some(label.to_string());
        }
        ".mmio_base" => {
            let tok = parts
                .next()
                .ok_or_else(|| err(lineno, AsmErrorKind::BadDirective(".mmio_base needs an address".into())))?;
            let v = parse_int(tok)
                .ok_or_else(|| err(lineno, AsmErrorKind::BadDirective(format!("bad address `{tok}`"))))?;
            module.mmio_base = Some(v as u64);
        }
        ".data" => {
            let tok = parts
                .next()
                .ok_or_else(|| err(lineno, AsmErrorKind::BadDirective(".data needs an address".into())))?;
            let mut addr = parse_int(tok)
                .ok_or_else(|| err(lineno, AsmErrorKind::BadDirective(format!("bad address `{tok}`"))))? as u64;
            for byte_tok in parts {
                let v = parse_int(byte_tok)
                    .and_then(|v| u8::try_from(v).ok())
                    .ok_or_else(|| {
                        err(lineno, AsmErrorKind::BadDirective(format!("bad byte `{byte_tok}`")))
                    })?;
                module.data.insert(addr, v);
                addr += 1;
            }
        }
        _ => return Err(err(lineno, AsmErrorKind::BadDirective(format!("unknown directive `{head}`")))),
    }
    Ok(())
}

/// Parse source text into a module without resolving labels.
pub fn parse(text: &str) -> Result<AsmModule, AsmError> {
    let mut module = AsmModule::default();
    for (idx, raw) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = match raw.find(';') {
            Some(i) => &raw[..i],
            None => raw,
        };
        let mut line = line.trim();
        if line.is_empty() {
            continue;
        }
        if line.starts_with('.') {
            parse_directive(line, lineno, &mut module)?;
            continue;
        }
        // Leading `Name:` label, optionally followed by an instruction.
        while let Some(colon) = line.find(':') {
            let candidate = line[..colon].trim();
            if !is_label_name(candidate) {
                break;
            }
            module.items.push(AsmItem::Label(candidate.to_string()));
            line = line[colon + 1..].trim();
            if line.is_empty() {
                break;
            }
        }
        if line.is_empty() {
            continue;
        }
        let (mnemonic, rest) = match line.find(char::is_whitespace) {
            Some(i) => (&line[..i], &line[i..]),
            None => (line, ""),
        };
        module.items.push(AsmItem::Inst(parse_inst(mnemonic, rest, lineno)?));
    }
    Ok(module)
}

/// Resolve a module's labels and build the flat program.
pub fn resolve(module: &AsmModule) -> Result<Program, AsmError> {
    let mut labels: BTreeMap<String, usize> = BTreeMap::new();
    let mut pc = 0usize;
    for item in &module.items {
        match item {
            AsmItem::Label(name) => {
                if labels.insert(name.clone(), pc).is_some() {
                    return Err(err(0, AsmErrorKind::DuplicateLabel(name.clone())));
                }
            }
            AsmItem::Inst(_) => pc += 1,
        }
    }
    let lookup = |name: &str| -> Result<usize, AsmError> {
        labels
            .get(name)
            .copied()
            .ok_or_else(|| err(0, AsmErrorKind::UndefinedLabel(name.to_string())))
    };
    let mut insts = Vec::new();
    for item in &module.items {
        let sym = match item {
            AsmItem::Label(_) => continue,
            AsmItem::Inst(sym) => sym,
        };
        let inst = match sym.clone() {
            SymInst::Add { dst, lhs, rhs } => Inst::Add { dst, lhs, rhs },
            SymInst::Sub { dst, lhs, rhs } => Inst::Sub { dst, lhs, rhs },
            SymInst::Mul { dst, lhs, rhs } => Inst::Mul { dst, lhs, rhs },
            SymInst::Addi { dst, src, imm } => Inst::Addi { dst, src, imm },
            SymInst::Movi { dst, imm } => {
                let imm = match imm {
                    SymImm::Int(v) => v,
                    SymImm::LabelIndex(name) => lookup(&name)? as i64,
                    SymImm::ChannelConfig { target, end } => {
                        pack_channel_config(lookup(&target)? as u32, lookup(&end)? as u32) as i64
                    }
                };
                Inst::Movi { dst, imm }
            }
            SymInst::Mov { dst, src } => Inst::Mov { dst, src },
            SymInst::CmpEq { dst, lhs, rhs } => Inst::CmpEq { dst, lhs, rhs },
            SymInst::CmpLe { dst, lhs, rhs } => Inst::CmpLe { dst, lhs, rhs },
            SymInst::CmpGe { dst, lhs, rhs } => Inst::CmpGe { dst, lhs, rhs },
            SymInst::And { dst, lhs, rhs } => Inst::And { dst, lhs, rhs },
            SymInst::Or { dst, lhs, rhs } => Inst::Or { dst, lhs, rhs },
            SymInst::Ld { dst, base, offset } => Inst::Ld { dst, base, offset },
            SymInst::St { src, base, offset } => Inst::St { src, base, offset },
            SymInst::Vst { lane0, width, base, offset } => Inst::Vst { lane0, width, base, offset },
            SymInst::Bnz { cond, target } => Inst::Bnz { cond, target: lookup(&target)? },
            SymInst::Bz { cond, target } => Inst::Bz { cond, target: lookup(&target)? },
            SymInst::Jmp { target } => Inst::Jmp { target: lookup(&target)? },
            SymInst::Halt => Inst::Halt,
        };
        insts.push(inst);
    }
    let entry = match &module.entry {
        Some(name) => lookup(name)?,
        None => 0,
    };
    let mmio = match module.mmio_base {
        Some(base) => MmioLayout::with_base(base),
        None => MmioLayout::default(),
    };
    let program = Program { insts, labels, image: module.data.clone(), entry, mmio };
    program.validate().map_err(|e| err(0, AsmErrorKind::Ir(e)))?;
    Ok(program)
}

/// Assemble source text to a validated program.
pub fn assemble(text: &str) -> Result<Program, AsmError> {
    resolve(&parse(text)?)
}

fn fmt_mem(base: Reg, offset: i64) -> String {
    if offset < 0 {
        format!("[{base}{offset}]")
    } else {
        format!("[{base}+{offset}]")
    }
}

/// Render a program as canonical source text. Every branch target carries a
/// label (synthesized as `L<idx>` when the program has none there), so the
/// output reassembles to the same program and re-disassembles identically.
pub fn disassemble(p: &Program) -> String {
    let mut labels_at: BTreeMap<usize, Vec<String>> = BTreeMap::new();
    for (name, &idx) in &p.labels {
        labels_at.entry(idx).or_default().push(name.clone());
    }
    for inst in &p.insts {
        if let Some(t) = inst.branch_target() {
            labels_at.entry(t).or_default();
        }
    }
    for (&idx, names) in labels_at.iter_mut() {
        if names.is_empty() {
            names.push(format!("L{idx}"));
        }
    }
    let first_label = |idx: usize| -> String {
        labels_at[&idx][0].clone()
    };

    let mut out = String::new();
    if p.mmio.base != MmioLayout::default().base {
        let _ = writeln!(out, ".mmio_base {:#x}", p.mmio.base);
    }
    if p.entry != 0 || !p.insts.is_empty() && p.labels.values().any(|&v| v == p.entry) {
        // Emit .entry only when a label exists for it; entry 0 without a
        // label is the default.
        if let Some((name, _)) = p.labels.iter().find(|(_, &v)| v == p.entry) {
            let _ = writeln!(out, ".entry {name}");
        } else if p.entry != 0 {
            let name = first_label(p.entry);
            let _ = writeln!(out, ".entry {name}");
        }
    }
    // Data image in runs of consecutive addresses, 16 bytes per line.
    let mut run_start: Option<u64> = None;
    let mut run: Vec<u8> = Vec::new();
    let flush = |out: &mut String, start: &mut Option<u64>, run: &mut Vec<u8>| {
        if let Some(s) = *start {
            for (i, chunk) in run.chunks(16).enumerate() {
                let bytes: Vec<String> = chunk.iter().map(|b| b.to_string()).collect();
                let _ = writeln!(out, ".data {:#x} {}", s + i as u64 * 16, bytes.join(" "));
            }
        }
        *start = None;
        run.clear();
    };
    let mut prev: Option<u64> = None;
    for (&addr, &byte) in &p.image {
        if prev.map(|p| p + 1) != Some(addr) {
            flush(&mut out, &mut run_start, &mut run);
            run_start = Some(addr);
        }
        run.push(byte);
        prev = Some(addr);
    }
    flush(&mut out, &mut run_start, &mut run);

    for (pc, inst) in p.insts.iter().enumerate() {
        if let Some(names) = labels_at.get(&pc) {
            for name in names {
                let _ = writeln!(out, "{name}:");
            }
        }
        let text = match *inst {
            Inst::Add { dst, lhs, rhs } => format!("ADD {dst}, {lhs}, {rhs}"),
            Inst::Sub { dst, lhs, rhs } => format!("SUB {dst}, {lhs}, {rhs}"),
            Inst::Mul { dst, lhs, rhs } => format!("MUL {dst}, {lhs}, {rhs}"),
            Inst::Addi { dst, src, imm } => format!("ADDI {dst}, {src}, {imm}"),
            Inst::Movi { dst, imm } => format!("MOVI {dst}, {imm}"),
            Inst::Mov { dst, src } => format!("MOV {dst}, {src}"),
            Inst::CmpEq { dst, lhs, rhs } => format!("CMP_EQ {dst}, {lhs}, {rhs}"),
            Inst::CmpLe { dst, lhs, rhs } => format!("CMP_LE {dst}, {lhs}, {rhs}"),
            Inst::CmpGe { dst, lhs, rhs } => format!("CMP_GE {dst}, {lhs}, {rhs}"),
            Inst::And { dst, lhs, rhs } => format!("AND {dst}, {lhs}, {rhs}"),
            Inst::Or { dst, lhs, rhs } => format!("OR {dst}, {lhs}, {rhs}"),
            Inst::Ld { dst, base, offset } => format!("LD {dst}, {}", fmt_mem(base, offset)),
            Inst::St { src, base, offset } => format!("ST {src}, {}", fmt_mem(base, offset)),
            Inst::Vst { lane0, width, base, offset } => {
                format!("VST {lane0}, {}, {width}", fmt_mem(base, offset))
            }
            Inst::Bnz { cond, target } => format!("BNZ {cond}, {}", first_label(target)),
            Inst::Bz { cond, target } => format!("BZ {cond}, {}", first_label(target)),
            Inst::Jmp { target } => format!("JMP {}", first_label(target)),
            Inst::Halt => "HALT".to_string(),
        };
        let _ = writeln!(out, "  {text}");
    }
    // Trailing labels (e.g. an end label one past the last instruction).
    if let Some(names) = labels_at.get(&p.insts.len()) {
        for name in names {
            let _ = writeln!(out, "{name}:");
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_program() {
        let p = assemble("MOVI r1, 5\nHALT\n").unwrap();
        assert_eq!(p.insts.len(), 2);
        assert_eq!(p.entry, 0);
        assert_eq!(p.insts[0], Inst::Movi { dst: Reg::r(1), imm: 5 });
        assert_eq!(p.insts[1], Inst::Halt);
    }

    #[test]
    fn end_label_after_loop_maps_past_loop_body() {
        let src = "\
  MOVI r1, 3
Loop:
  ADDI r1, r1, -1
  BNZ r1, Loop
End:
  HALT
";
        let p = assemble(src).unwrap();
        assert_eq!(p.pc_of("Loop"), Some(1));
        assert_eq!(p.pc_of("End"), Some(3));
        assert_eq!(p.insts[2], Inst::Bnz { cond: Reg::r(1), target: 1 });
    }

    #[test]
    fn undefined_label_reports_name() {
        let e = assemble("BNZ r1, Missing\nHALT\n").unwrap_err();
        assert_eq!(e.kind, AsmErrorKind::UndefinedLabel("Missing".into()));
    }

    #[test]
    fn register_out_of_range_reports_line() {
        let e = assemble("HALT\nMOVI r32, 1\n").unwrap_err();
        assert_eq!(e.line, 2);
        assert_eq!(e.kind, AsmErrorKind::RegisterOutOfRange(32));
    }

    #[test]
    fn directives_and_memory_operands() {
        let src = "\
.entry main
.mmio_base 0xB0550000
.data 0x1000 1 2 255
main:
  LD r2, [r1+8]
  ST r2, [r1-8]
  VST r8, [r1+0], 4
  HALT
";
        let p = assemble(src).unwrap();
        assert_eq!(p.entry, 0);
        assert_eq!(p.image.get(&0x1002), Some(&255));
        assert_eq!(p.insts[0], Inst::Ld { dst: Reg::r(2), base: Reg::r(1), offset: 8 });
        assert_eq!(p.insts[1], Inst::St { src: Reg::r(2), base: Reg::r(1), offset: -8 });
        assert_eq!(
            p.insts[2],
            Inst::Vst { lane0: Reg::r(8), width: 4, base: Reg::r(1), offset: 0 }
        );
    }

    #[test]
    fn cfg_immediate_packs_label_pair() {
        let src = "\
  MOVI r1, cfg(BR, End)
BR:
  HALT
End:
  HALT
";
        let p = assemble(src).unwrap();
        assert_eq!(p.insts[0], Inst::Movi { dst: Reg::r(1), imm: (1u64 | 2u64 << 32) as i64 });
    }

    #[test]
    fn label_valued_immediate() {
        let p = assemble("MOVI r1, Done\nDone:\nHALT\n").unwrap();
        assert_eq!(p.insts[0], Inst::Movi { dst: Reg::r(1), imm: 1 });
    }

    #[test]
    fn disassemble_round_trips_canonical_text() {
        let src = "\
.data 0x1000 7 9
  MOVI r1, 4
Loop:
  ADDI r1, r1, -1
  LD r3, [r1+0]
  BNZ r1, Loop
End:
  HALT
";
        let p = assemble(src).unwrap();
        let canonical = disassemble(&p);
        let p2 = assemble(&canonical).unwrap();
        assert_eq!(p, p2);
        assert_eq!(disassemble(&p2), canonical);
    }

    #[test]
    fn duplicate_label_rejected() {
        let e = assemble("A:\nHALT\nA:\nHALT\n").unwrap_err();
        assert_eq!(e.kind, AsmErrorKind::DuplicateLabel("A".into()));
    }

    #[test]
    fn comments_and_inline_labels() {
        let p = assemble("start: MOVI r1, 1 ; set up\n  HALT\n").unwrap();
        assert_eq!(p.pc_of("start"), Some(0));
        assert_eq!(p.insts.len(), 2);
    }
}
