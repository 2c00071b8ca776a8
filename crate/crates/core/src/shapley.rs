//! Harsanyi dividends and the exact pairwise Shapley Interaction Index over
//! small cooperative games, plus the macro-coalition game used as the SII
//! ground truth for a (instance, explainer) pair.
//!
//! Coalitions are bitmasks over players: bit `p` set means player `p` is
//! unmasked. With `P` players the interaction of `i` and `j` is
//!
//! ```text
//! Φ_ij = Σ_{S ⊆ N\{i,j}} |S|! (P-|S|-2)! / (P-1)! · Δ_ij(S)
//! Δ_ij(S) = ν(S∪{i,j}) - ν(S∪{i}) - ν(S∪{j}) + ν(S)
//! ```

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::game::{check_score, ValueFunction};
use crate::mask::{FeatureBits, Modality, MultimodalInstance, MultimodalMask};
use crate::perturb::{top_k_count, trapezoid, AttributionMap, PerturbationSchedule};

/// Largest game enumerated exhaustively.
pub const MAX_PLAYERS: usize = 16;

/// Default number of bimodal background players.
pub const DEFAULT_BACKGROUND_PLAYERS: usize = 6;

/// Features a macro-player reveals when it joins a coalition.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MacroPlayer {
    pub visual: Vec<usize>,
    pub textual: Vec<usize>,
}

/// A cooperative game with its full value table.
#[derive(Clone, Debug, PartialEq)]
pub struct CoalitionGame {
    players: usize,
    payloads: Vec<MacroPlayer>,
    values: Vec<f64>,
}

fn check_player_count(players: usize) -> Result<()> {
    if players < 2 {
        Err(Error::TooFewPlayers(players))
    } else if players > MAX_PLAYERS {
        Err(Error::TooManyPlayers { players, limit: MAX_PLAYERS })
    } else {
        Ok(())
    }
}

impl CoalitionGame {
    /// Abstract game from a value per coalition bitmask (`values.len() == 2^P`).
    pub fn from_table(values: Vec<f64>) -> Result<Self> {
        if !values.len().is_power_of_two() {
            return Err(Error::InvalidModel("table length must be a power of two"));
        }
        let players = values.len().trailing_zeros() as usize;
        check_player_count(players)?;
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidModel("game values must be finite"));
        }
        Ok(Self {
            players,
            payloads: Vec::new(),
            values,
        })
    }

    /// Game whose players are feature payloads over `instance`, valued by `vf`.
    ///
    /// Payloads must partition every patch and token. All `2^P` coalitions are
    /// evaluated once.
    pub fn from_value_function<V: ValueFunction + ?Sized>(
        vf: &V,
        instance: &MultimodalInstance,
        payloads: Vec<MacroPlayer>,
    ) -> Result<Self> {
        check_player_count(payloads.len())?;
        check_partition(instance, &payloads)?;
        let values = (0..1usize << payloads.len())
            .map(|coalition| {
                let mask = expand(instance, &payloads, coalition);
                vf.evaluate(instance, &mask)
                    .and_then(check_score)
                    .map_err(|source| Error::Evaluation {
                        context: format!("macro coalition {coalition:#b}"),
                        source,
                    })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            players: payloads.len(),
            payloads,
            values,
        })
    }

    pub fn players(&self) -> usize {
        self.players
    }

    /// Empty for abstract games.
    pub fn payloads(&self) -> &[MacroPlayer] {
        &self.payloads
    }

    pub fn value(&self, coalition: usize) -> f64 {
        self.values[coalition]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Size of the value table, i.e. `2^P`.
    pub fn coalitions_evaluated(&self) -> usize {
        self.values.len()
    }
}

fn check_partition(instance: &MultimodalInstance, payloads: &[MacroPlayer]) -> Result<()> {
    for modality in Modality::BOTH {
        let len = instance.len(modality);
        let mut seen = FeatureBits::zeros(len);
        for p in payloads {
            let features = match modality {
                Modality::Visual => &p.visual,
                Modality::Textual => &p.textual,
            };
            for &f in features {
                if f >= len {
                    return Err(Error::InvalidPartition("feature index out of range"));
                }
                if seen.get(f) {
                    return Err(Error::InvalidPartition("payloads overlap"));
                }
                seen.set(f, true);
            }
        }
        if !seen.all() {
            return Err(Error::InvalidPartition("payloads do not cover every feature"));
        }
    }
    Ok(())
}

/// Mask revealing exactly the payloads of the players in `coalition`.
pub fn expand(instance: &MultimodalInstance, payloads: &[MacroPlayer], coalition: usize) -> MultimodalMask {
    let mut mask = MultimodalMask::empty(instance);
    for (p, player) in payloads.iter().enumerate() {
        if coalition >> p & 1 == 1 {
            player.visual.iter().for_each(|&i| mask.visual.set(i, true));
            player.textual.iter().for_each(|&j| mask.textual.set(j, true));
        }
    }
    mask
}

fn check_pair(game: &CoalitionGame, i: usize, j: usize, context: usize) -> Result<()> {
    let all = (1usize << game.players) - 1;
    let pair = (1usize << i) | (1usize << j);
    if i == j || i >= game.players || j >= game.players || context & pair != 0 || context & !all != 0 {
        return Err(Error::DividendContract {
            i,
            j,
            context: (0..usize::BITS as usize).filter(|b| context >> b & 1 == 1).collect(),
        });
    }
    Ok(())
}

fn dividend_unchecked(game: &CoalitionGame, i: usize, j: usize, context: usize) -> f64 {
    let (bi, bj) = (1usize << i, 1usize << j);
    game.value(context | bi | bj) - game.value(context | bi) - game.value(context | bj) + game.value(context)
}

/// `Δ_ij ν(S)` for a context `S` (bitmask) excluding `i` and `j`.
pub fn harsanyi_dividend(game: &CoalitionGame, i: usize, j: usize, context: usize) -> Result<f64> {
    check_pair(game, i, j, context)?;
    Ok(dividend_unchecked(game, i, j, context))
}

fn factorial(n: usize) -> u64 {
    (1..=n as u64).product()
}

/// SII kernel weight for a context of size `size` in a `players`-player game,
/// as the exact fraction `size! (P-size-2)! / (P-1)!`.
pub fn kernel_weight_ratio(size: usize, players: usize) -> (u64, u64) {
    assert!((2..=MAX_PLAYERS).contains(&players) && size + 2 <= players);
    (factorial(size) * factorial(players - size - 2), factorial(players - 1))
}

/// Kernel weight as a correctly rounded `f64` (both factorials are exact in f64 up to 15!).
pub fn kernel_weight(size: usize, players: usize) -> f64 {
    let (num, den) = kernel_weight_ratio(size, players);
    num as f64 / den as f64
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SiiResult {
    pub pair: (usize, usize),
    pub phi: f64,
    pub coalitions_evaluated: usize,
}

/// Exact pairwise SII by full enumeration of the contexts of `i` and `j`.
///
/// Dividends are summed per context size before weighting, in ascending
/// coalition order, so repeated calls are bit-identical.
pub fn exact_sii(game: &CoalitionGame, i: usize, j: usize) -> Result<SiiResult> {
    check_player_count(game.players)?;
    check_pair(game, i, j, 0)?;
    let p = game.players;
    let pair = (1usize << i) | (1usize << j);
    let mut by_size = [0.0f64; MAX_PLAYERS - 1];
    for context in 0..1usize << p {
        if context & pair == 0 {
            by_size[context.count_ones() as usize] += dividend_unchecked(game, i, j, context);
        }
    }
    let phi = (0..=p - 2).map(|s| kernel_weight(s, p) * by_size[s]).sum();
    Ok(SiiResult {
        pair: (i, j),
        phi,
        coalitions_evaluated: game.coalitions_evaluated(),
    })
}

fn mix(mut h: u64, bytes: &[u8]) -> u64 {
    // FNV-1a
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Shuffle seed for the background partition at threshold `k`.
pub fn partition_seed(seed: u64, instance_id: &str, k: f64) -> u64 {
    let h = mix(0xcbf2_9ce4_8422_2325, &seed.to_le_bytes());
    let h = mix(h, instance_id.as_bytes());
    mix(h, &k.to_bits().to_le_bytes())
}

/// Splits `items` into `parts` contiguous chunks whose sizes differ by at most one.
pub fn balanced_parts(items: &[usize], parts: usize) -> Vec<Vec<usize>> {
    let base = items.len() / parts;
    let extra = items.len() % parts;
    let mut out = Vec::with_capacity(parts);
    let mut start = 0;
    for c in 0..parts {
        let size = base + (c < extra) as usize;
        out.push(items[start..start + size].to_vec());
        start += size;
    }
    out
}

/// Player payloads of the macro-game at threshold `k`: player 0 is the top-k
/// visual set, player 1 the top-k textual set, and players `2..C+2` couple the
/// `c`-th shuffled part of the visual background with the `c`-th part of the
/// textual background.
pub fn macro_players(
    instance: &MultimodalInstance,
    attr: &AttributionMap,
    k: f64,
    background_players: usize,
    seed: u64,
) -> Result<Vec<MacroPlayer>> {
    attr.check_bound(instance)?;
    if !(k > 0.0 && k < 1.0) {
        return Err(Error::DegeneratePartition { k, reason: "threshold must lie strictly inside (0, 1)" });
    }
    if background_players == 0 {
        return Err(Error::DegeneratePartition { k, reason: "need at least one background player" });
    }
    check_player_count(background_players + 2)?;

    let mut rng = ChaCha8Rng::seed_from_u64(partition_seed(seed, instance.id(), k));
    let mut split = |modality: Modality| -> Result<(Vec<usize>, Vec<usize>)> {
        let ranking = attr.ranking(modality);
        let count = top_k_count(k, ranking.len());
        let mut foreground = ranking[..count].to_vec();
        let mut background = ranking[count..].to_vec();
        if foreground.is_empty() {
            return Err(Error::DegeneratePartition { k, reason: "empty foreground" });
        }
        if background.is_empty() {
            return Err(Error::DegeneratePartition {
                k,
                reason: match modality {
                    Modality::Visual => "empty visual background",
                    Modality::Textual => "empty textual background",
                },
            });
        }
        foreground.sort_unstable();
        // Canonical order before shuffling so the partition depends only on the set.
        background.sort_unstable();
        background.shuffle(&mut rng);
        Ok((foreground, background))
    };
    let (fg_visual, bg_visual) = split(Modality::Visual)?;
    let (fg_text, bg_text) = split(Modality::Textual)?;

    let mut players = Vec::with_capacity(background_players + 2);
    players.push(MacroPlayer { visual: fg_visual, textual: Vec::new() });
    players.push(MacroPlayer { visual: Vec::new(), textual: fg_text });
    let visual_parts = balanced_parts(&bg_visual, background_players);
    let text_parts = balanced_parts(&bg_text, background_players);
    for (visual, textual) in visual_parts.into_iter().zip(text_parts) {
        players.push(MacroPlayer { visual, textual });
    }
    Ok(players)
}

/// The evaluated macro-game at threshold `k`.
pub fn build_macro_game<V: ValueFunction + ?Sized>(
    vf: &V,
    instance: &MultimodalInstance,
    attr: &AttributionMap,
    k: f64,
    background_players: usize,
    seed: u64,
) -> Result<CoalitionGame> {
    let players = macro_players(instance, attr, k, background_players, seed)?;
    CoalitionGame::from_value_function(vf, instance, players)
}

/// Interaction of the two foreground players at one threshold.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ThresholdSii {
    pub k: f64,
    pub phi: f64,
    pub coalitions_evaluated: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruth {
    pub per_threshold: Vec<ThresholdSii>,
    /// Trapezoidal average of `Φ_12` over the interior thresholds.
    pub value: f64,
}

impl GroundTruth {
    pub fn coalitions_evaluated(&self) -> usize {
        self.per_threshold.iter().map(|t| t.coalitions_evaluated).sum()
    }
}

/// SII ground truth: `Φ` between the top-k visual and top-k textual
/// macro-players at every interior threshold, averaged with the trapezoid rule.
pub fn sii_ground_truth<V: ValueFunction + ?Sized>(
    vf: &V,
    instance: &MultimodalInstance,
    attr: &AttributionMap,
    schedule: &PerturbationSchedule,
    background_players: usize,
    seed: u64,
) -> Result<GroundTruth> {
    let interior = schedule.interior();
    if interior.is_empty() {
        return Err(Error::InvalidSchedule("no interior thresholds for the macro-game"));
    }
    let per_threshold = interior
        .iter()
        .map(|&k| {
            let game = build_macro_game(vf, instance, attr, k, background_players, seed)?;
            let sii = exact_sii(&game, 0, 1)?;
            Ok(ThresholdSii {
                k,
                phi: sii.phi,
                coalitions_evaluated: sii.coalitions_evaluated,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let value = if per_threshold.len() == 1 {
        per_threshold[0].phi
    } else {
        let ks: Vec<f64> = per_threshold.iter().map(|t| t.k).collect();
        let phis: Vec<f64> = per_threshold.iter().map(|t| t.phi).collect();
        trapezoid(&ks, &phis) / (ks[ks.len() - 1] - ks[0])
    };
    Ok(GroundTruth { per_threshold, value })
}

/// One (instance, explainer) observation for the surrogate check.
#[derive(Clone, Debug, PartialEq)]
pub struct SurrogatePair {
    pub instance_id: String,
    pub explainer: String,
    pub f_syn: f64,
    pub sii: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Correlation {
    pub spearman: f64,
    pub kendall: f64,
    pub pairs: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SurrogateValidation {
    pub pooled: Correlation,
    /// Per explainer; `None` where the correlation is undefined (constant scores or < 3 pairs).
    pub per_explainer: Vec<(String, Option<Correlation>)>,
}

fn correlate(f_syn: &[f64], sii: &[f64]) -> Result<Correlation> {
    let spearman = crate::stats::spearman_rho(f_syn, sii)?.rho;
    let kendall = crate::stats::kendall_tau(f_syn, sii)?.tau;
    Ok(Correlation {
        spearman,
        kendall,
        pairs: f_syn.len(),
    })
}

/// Rank agreement between F_syn and the SII ground truth over pooled
/// (instance × explainer) pairs, and within each explainer.
pub fn validate_surrogate(pairs: &[SurrogatePair]) -> Result<SurrogateValidation> {
    if pairs.len() < 3 {
        return Err(Error::InsufficientData { needed: 3, found: pairs.len() });
    }
    let f_syn: Vec<f64> = pairs.iter().map(|p| p.f_syn).collect();
    let sii: Vec<f64> = pairs.iter().map(|p| p.sii).collect();
    let pooled = correlate(&f_syn, &sii)?;

    let mut explainers: Vec<&str> = pairs.iter().map(|p| p.explainer.as_str()).collect();
    explainers.sort_unstable();
    explainers.dedup();
    let per_explainer = explainers
        .into_iter()
        .map(|e| {
            let (f, s): (Vec<f64>, Vec<f64>) = pairs
                .iter()
                .filter(|p| p.explainer == e)
                .map(|p| (p.f_syn, p.sii))
                .unzip();
            (String::from(e), correlate(&f, &s).ok())
        })
        .collect();
    Ok(SurrogateValidation { pooled, per_explainer })
}
