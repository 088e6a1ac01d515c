//! Synthetic verifiable tasks over a fixed token vocabulary.
//!
//! The arithmetic family renders `a op b [op c ...] MOD m EQ` prompts, where
//! the expression is evaluated left to right and the reference answer is the
//! Euclidean residue modulo `m`, written as decimal digit tokens. Generated
//! outputs have the shape `trace ++ [ANSWER] ++ answer ++ [EOS]`.
//!
//! A second, degenerate family (`Bandit`) exposes a two-armed single-token
//! problem used as a sanity check for the optimizer.

use std::collections::BTreeSet;

use rand::seq::index;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::DecodeConfig;
use crate::rng::Rng;

pub type Token = usize;

/// Token ids of the arithmetic vocabulary. Digits occupy `0..=9`.
pub mod tok {
    use super::Token;

    pub const PLUS: Token = 10;
    pub const MINUS: Token = 11;
    pub const TIMES: Token = 12;
    pub const MOD: Token = 13;
    pub const EQ: Token = 14;
    pub const BOS: Token = 15;
    pub const EOS: Token = 16;
    pub const ANSWER: Token = 17;
    pub const VERIFY: Token = 18;
    pub const SEP: Token = 19;
    pub const JUDGE: Token = 20;
    pub const YES: Token = 21;
    pub const NO: Token = 22;
    pub const SIZE: usize = 23;
}

const SYMBOLS: [&str; tok::SIZE] = [
    "0", "1", "2", "3", "4", "5", "6", "7", "8", "9", "+", "-", "*", "MOD", "EQ", "BOS", "EOS",
    "ANSWER", "VERIFY", "SEP", "JUDGE", "YES", "NO",
];

/// The arithmetic vocabulary: dense ids in `[0, size)`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Vocabulary;

impl Vocabulary {
    pub fn size(&self) -> usize {
        tok::SIZE
    }

    pub fn symbols(&self) -> &'static [&'static str] {
        &SYMBOLS
    }

    pub fn symbol(&self, token: Token) -> Option<&'static str> {
        SYMBOLS.get(token).copied()
    }

    pub fn is_digit(&self, token: Token) -> bool {
        token <= 9
    }

    /// Control tokens are everything the task grammar uses for structure
    /// rather than content.
    pub fn is_control(&self, token: Token) -> bool {
        (tok::BOS..=tok::NO).contains(&token)
    }

    /// Digits, operators, `MOD` and `EQ`.
    pub fn content_tokens(&self) -> impl Iterator<Item = Token> {
        0..tok::BOS
    }

    pub fn render(&self, tokens: &[Token]) -> String {
        tokens
            .iter()
            .map(|&t| self.symbol(t).unwrap_or("?"))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

pub fn digits_of(mut value: u64) -> Vec<Token> {
    let mut out = Vec::new();
    loop {
        out.push((value % 10) as Token);
        value /= 10;
        if value == 0 {
            break;
        }
    }
    out.reverse();
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Op {
    Add,
    Sub,
    Mul,
}

impl Op {
    pub fn token(self) -> Token {
        match self {
            Op::Add => tok::PLUS,
            Op::Sub => tok::MINUS,
            Op::Mul => tok::TIMES,
        }
    }

    fn from_token(token: Token) -> Option<Op> {
        match token {
            tok::PLUS => Some(Op::Add),
            tok::MINUS => Some(Op::Sub),
            tok::TIMES => Some(Op::Mul),
            _ => None,
        }
    }

    fn apply(self, lhs: i64, rhs: i64) -> i64 {
        match self {
            Op::Add => lhs + rhs,
            Op::Sub => lhs - rhs,
            Op::Mul => lhs * rhs,
        }
    }
}

/// Generation parameters for the arithmetic family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArithmeticParams {
    /// Number of operands in each expression.
    pub difficulty: usize,
    /// Operands are drawn uniformly from `0..=operand_max`.
    pub operand_max: u32,
    pub moduli: Vec<u32>,
    pub ops: Vec<Op>,
}

impl Default for ArithmeticParams {
    fn default() -> Self {
        ArithmeticParams {
            difficulty: 2,
            operand_max: 4,
            moduli: (2..=5).collect(),
            ops: vec![Op::Add, Op::Sub, Op::Mul],
        }
    }
}

impl ArithmeticParams {
    pub fn validate(&self) -> Result<()> {
        if self.difficulty < 1 {
            return Err(Error::config("task.difficulty", "must be at least 1"));
        }
        if self.moduli.is_empty() {
            return Err(Error::config("task.moduli", "must not be empty"));
        }
        if self.moduli.iter().any(|&m| m < 2) {
            return Err(Error::config("task.moduli", "every modulus must be at least 2"));
        }
        if self.ops.is_empty() {
            return Err(Error::config("task.ops", "must not be empty"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Query {
    pub id: u64,
    pub prompt_tokens: Vec<Token>,
    pub reference_answer: Vec<Token>,
    pub difficulty: usize,
}

/// A parsed `a op b ... MOD m EQ` prompt.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Expression {
    pub operands: Vec<u64>,
    pub ops: Vec<Op>,
    pub modulus: u64,
}

impl Expression {
    pub fn residue(&self) -> u64 {
        let mut acc = self.operands[0] as i64;
        for (op, &rhs) in self.ops.iter().zip(&self.operands[1..]) {
            acc = op.apply(acc, rhs as i64);
        }
        acc.rem_euclid(self.modulus as i64) as u64
    }
}

fn read_number(tokens: &[Token], pos: &mut usize) -> Option<u64> {
    let start = *pos;
    let mut value: u64 = 0;
    while *pos < tokens.len() && tokens[*pos] <= 9 {
        value = value.checked_mul(10)?.checked_add(tokens[*pos] as u64)?;
        *pos += 1;
    }
    (*pos > start).then_some(value)
}

pub fn parse_prompt(tokens: &[Token]) -> Result<Expression> {
    let malformed = |why: &str| Error::MalformedQuery(format!("{why}: {}", Vocabulary.render(tokens)));
    let mut pos = 0;
    let mut operands = vec![read_number(tokens, &mut pos).ok_or_else(|| malformed("expected operand"))?];
    let mut ops = Vec::new();
    while pos < tokens.len() {
        if let Some(op) = Op::from_token(tokens[pos]) {
            pos += 1;
            ops.push(op);
            operands.push(read_number(tokens, &mut pos).ok_or_else(|| malformed("expected operand"))?);
        } else {
            break;
        }
    }
    if tokens.get(pos) != Some(&tok::MOD) {
        return Err(malformed("expected MOD"));
    }
    pos += 1;
    let modulus = read_number(tokens, &mut pos).ok_or_else(|| malformed("expected modulus"))?;
    if modulus == 0 {
        return Err(malformed("zero modulus"));
    }
    if tokens.get(pos) != Some(&tok::EQ) || pos + 1 != tokens.len() {
        return Err(malformed("expected trailing EQ"));
    }
    Ok(Expression {
        operands,
        ops,
        modulus,
    })
}

/// Ground-truth residue of an arithmetic query, as digit tokens.
pub fn oracle_answer(query: &Query) -> Result<Vec<Token>> {
    Ok(digits_of(parse_prompt(&query.prompt_tokens)?.residue()))
}

pub fn sample_query(rng: &mut Rng, id: u64, params: &ArithmeticParams) -> Result<Query> {
    params.validate()?;
    let mut prompt = Vec::new();
    for i in 0..params.difficulty {
        if i > 0 {
            prompt.push(params.ops[rng.random_range(0..params.ops.len())].token());
        }
        prompt.extend(digits_of(rng.random_range(0..=params.operand_max) as u64));
    }
    prompt.push(tok::MOD);
    prompt.extend(digits_of(params.moduli[rng.random_range(0..params.moduli.len())] as u64));
    prompt.push(tok::EQ);
    let reference_answer = digits_of(parse_prompt(&prompt)?.residue());
    Ok(Query {
        id,
        prompt_tokens: prompt,
        reference_answer,
        difficulty: params.difficulty,
    })
}

pub fn render_generation_prompt(query: &Query) -> Result<Vec<Token>> {
    if query.prompt_tokens.is_empty() {
        return Err(Error::InvalidArgument(format!("query {} has an empty prompt", query.id)));
    }
    let mut out = Vec::with_capacity(query.prompt_tokens.len() + 1);
    out.push(tok::BOS);
    out.extend_from_slice(&query.prompt_tokens);
    Ok(out)
}

pub fn render_verification_prompt(prompt_tokens: &[Token], candidate_answer: &[Token]) -> Result<Vec<Token>> {
    if candidate_answer.is_empty() {
        return Err(Error::InvalidArgument("empty candidate answer".into()));
    }
    let mut out = Vec::with_capacity(prompt_tokens.len() + candidate_answer.len() + 4);
    out.extend([tok::BOS, tok::VERIFY]);
    out.extend_from_slice(prompt_tokens);
    out.push(tok::SEP);
    out.extend_from_slice(candidate_answer);
    out.push(tok::JUDGE);
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParseStatus {
    Ok,
    NoAnswerDelimiter,
    MultipleAnswers,
    OverLength,
    Malformed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseOutcome {
    pub status: ParseStatus,
    pub answer: Option<Vec<Token>>,
}

impl ParseOutcome {
    fn fail(status: ParseStatus) -> Self {
        ParseOutcome { status, answer: None }
    }

    pub fn is_ok(&self) -> bool {
        self.status == ParseStatus::Ok
    }
}

/// Splits a generated sequence into its final answer.
///
/// Checks run in order: length cap, `ANSWER` count, then structure. A
/// well-formed output has exactly one `ANSWER`, one or more digit tokens
/// after it, and a single terminating `EOS` as its last token.
pub fn parse_output(output: &[Token], max_len: usize) -> ParseOutcome {
    if output.len() > max_len {
        return ParseOutcome::fail(ParseStatus::OverLength);
    }
    let answer_positions: Vec<usize> = output
        .iter()
        .enumerate()
        .filter(|(_, &t)| t == tok::ANSWER)
        .map(|(i, _)| i)
        .collect();
    let at = match answer_positions.as_slice() {
        [] => return ParseOutcome::fail(ParseStatus::NoAnswerDelimiter),
        [at] => *at,
        _ => return ParseOutcome::fail(ParseStatus::MultipleAnswers),
    };
    let eos_count = output.iter().filter(|&&t| t == tok::EOS).count();
    if eos_count != 1 || output.last() != Some(&tok::EOS) {
        return ParseOutcome::fail(ParseStatus::Malformed);
    }
    let span = &output[at + 1..output.len() - 1];
    if span.is_empty() || span.iter().any(|&t| t > 9) {
        return ParseOutcome::fail(ParseStatus::Malformed);
    }
    ParseOutcome {
        status: ParseStatus::Ok,
        answer: Some(span.to_vec()),
    }
}

/// Tokens before `ANSWER`, or the whole output when there is none.
pub fn reasoning_trace(output: &[Token]) -> &[Token] {
    match output.iter().position(|&t| t == tok::ANSWER) {
        Some(at) => &output[..at],
        None => output,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationVerdict {
    pub reward: f64,
    pub label: bool,
    pub parse: ParseOutcome,
}

pub fn verify_generation(query: &Query, output: &[Token], max_len: usize) -> GenerationVerdict {
    let parse = parse_output(output, max_len);
    let label = parse.answer.as_deref() == Some(query.reference_answer.as_slice());
    GenerationVerdict {
        reward: if label { 1.0 } else { 0.0 },
        label,
        parse,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Judgment {
    Yes,
    No,
    Invalid,
}

impl Judgment {
    /// Reads the judgment off the first generated token.
    pub fn from_output(output: &[Token]) -> Judgment {
        match output.first() {
            Some(&tok::YES) => Judgment::Yes,
            Some(&tok::NO) => Judgment::No,
            _ => Judgment::Invalid,
        }
    }
}

pub fn verify_judgment(judgment: Judgment, label: bool) -> f64 {
    match (judgment, label) {
        (Judgment::Yes, true) | (Judgment::No, false) => 1.0,
        _ => 0.0,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorruptionConfig {
    pub corrupt_count: usize,
    /// Fraction of the reasoning trace kept before corruption (rounded up).
    #[serde(default = "default_keep_fraction")]
    pub keep_fraction: f64,
}

fn default_keep_fraction() -> f64 {
    1.0
}

impl CorruptionConfig {
    pub fn new(corrupt_count: usize) -> Self {
        CorruptionConfig {
            corrupt_count,
            keep_fraction: 1.0,
        }
    }
}

/// Truncates the reasoning trace of `generated` and overwrites exactly
/// `corrupt_count` distinct positions with different content tokens.
pub fn corrupt_prefix(generated: &[Token], rng: &mut Rng, cfg: &CorruptionConfig) -> Result<Vec<Token>> {
    if !(0.0..=1.0).contains(&cfg.keep_fraction) {
        return Err(Error::InvalidArgument(format!(
            "keep_fraction {} outside [0, 1]",
            cfg.keep_fraction
        )));
    }
    let trace = reasoning_trace(generated);
    let keep = ((trace.len() as f64) * cfg.keep_fraction).ceil() as usize;
    let mut prefix: Vec<Token> = trace[..keep.min(trace.len())].to_vec();
    // An EOS inside the trace would end decoding immediately.
    if let Some(eos) = prefix.iter().position(|&t| t == tok::EOS) {
        prefix.truncate(eos);
    }
    if prefix.len() < cfg.corrupt_count {
        return Err(Error::TrajectoryTooShort {
            available: prefix.len(),
            requested: cfg.corrupt_count,
        });
    }
    let content: Vec<Token> = Vocabulary.content_tokens().collect();
    for pos in index::sample(rng, prefix.len(), cfg.corrupt_count) {
        let original = prefix[pos];
        let choices: Vec<Token> = content.iter().copied().filter(|&t| t != original).collect();
        prefix[pos] = choices[rng.random_range(0..choices.len())];
    }
    Ok(prefix)
}

pub mod bandit {
    //! Two-armed single-token task: arm `A` pays 1, arm `B` pays 0.
    use super::Token;

    pub const BOS: Token = 0;
    pub const ARM_A: Token = 1;
    pub const ARM_B: Token = 2;
    pub const SIZE: usize = 3;
}

/// A task family the trainer can sample queries from and score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Task {
    Arithmetic(ArithmeticParams),
    Bandit,
}

impl Default for Task {
    fn default() -> Self {
        Task::Arithmetic(ArithmeticParams::default())
    }
}

impl Task {
    pub fn validate(&self) -> Result<()> {
        match self {
            Task::Arithmetic(p) => p.validate(),
            Task::Bandit => Ok(()),
        }
    }

    pub fn vocab_size(&self) -> usize {
        match self {
            Task::Arithmetic(_) => tok::SIZE,
            Task::Bandit => bandit::SIZE,
        }
    }

    pub fn bos(&self) -> Token {
        match self {
            Task::Arithmetic(_) => tok::BOS,
            Task::Bandit => bandit::BOS,
        }
    }

    pub fn stop_token(&self) -> Option<Token> {
        match self {
            Task::Arithmetic(_) => Some(tok::EOS),
            Task::Bandit => None,
        }
    }

    /// Decoding settings for answering a query of this task: a bandit pull is
    /// a single token.
    pub fn generation_decode(&self, decode: &DecodeConfig) -> DecodeConfig {
        match self {
            Task::Arithmetic(_) => decode.clone(),
            Task::Bandit => DecodeConfig {
                max_new_tokens: 1,
                ..decode.clone()
            },
        }
    }

    pub fn supports_verification(&self) -> bool {
        matches!(self, Task::Arithmetic(_))
    }

    pub fn sample_query(&self, rng: &mut Rng, id: u64) -> Result<Query> {
        match self {
            Task::Arithmetic(p) => sample_query(rng, id, p),
            Task::Bandit => Ok(Query {
                id,
                prompt_tokens: Vec::new(),
                reference_answer: vec![bandit::ARM_A],
                difficulty: 1,
            }),
        }
    }

    pub fn generation_prompt(&self, query: &Query) -> Result<Vec<Token>> {
        match self {
            Task::Arithmetic(_) => render_generation_prompt(query),
            Task::Bandit => Ok(vec![bandit::BOS]),
        }
    }

    pub fn score_generation(&self, query: &Query, output: &[Token], max_len: usize) -> GenerationVerdict {
        match self {
            Task::Arithmetic(_) => verify_generation(query, output, max_len),
            Task::Bandit => {
                let parse = if output.len() == 1 {
                    ParseOutcome {
                        status: ParseStatus::Ok,
                        answer: Some(output.to_vec()),
                    }
                } else {
                    ParseOutcome::fail(ParseStatus::Malformed)
                };
                let label = output == [bandit::ARM_A];
                GenerationVerdict {
                    reward: if label { 1.0 } else { 0.0 },
                    label,
                    parse,
                }
            }
        }
    }
}

/// Every residue a query's modulus admits, as digit tokens.
pub fn answer_space(query: &Query) -> Result<BTreeSet<Vec<Token>>> {
    let expr = parse_prompt(&query.prompt_tokens)?;
    Ok((0..expr.modulus).map(digits_of).collect())
}
