#pragma once

#include "mtkd/common.hpp"
#include "mtkd/lattice.hpp"

#include <span>
#include <vector>

namespace mtkd {

/// Predictor + joint network viewed as a scoring function for decoding. The
/// predictor state is an opaque vector owned by the caller.
class JointScorer {
public:
    virtual ~JointScorer() = default;

    virtual std::size_t vocab_size() const = 0;
    virtual std::vector<double> initial_state() const = 0;
    virtual std::vector<double> advance(std::span<const double> state, int token) const = 0;

    /// Writes log-probabilities over the vocabulary for one encoder frame.
    virtual void log_probs(std::span<const double> frame, std::span<const double> state,
                           std::span<double> out) const = 0;
};

struct Hypothesis {
    LabelSequence tokens;
    /// Log-probability of the best alignment found for `tokens`.
    double score = 0.0;
};

inline constexpr int kDefaultMaxSymbolsPerFrame = 3;

/// Per frame, emit the argmax symbol until blank wins (or the per-frame cap is
/// hit, in which case blank is forced). Ties go to the lowest index.
Hypothesis greedy_decode(const Matrix& encoder_out, const JointScorer& scorer,
                         int max_symbols_per_frame = kDefaultMaxSymbolsPerFrame);

/// Time-synchronous Viterbi beam search. Hypotheses reaching the same token
/// sequence are merged by max. Ranking is by score, then lexicographically by
/// tokens, so beam = 1 reproduces greedy_decode exactly.
Hypothesis beam_search_decode(const Matrix& encoder_out, const JointScorer& scorer, int beam,
                              int max_symbols_per_frame = kDefaultMaxSymbolsPerFrame);

/// Levenshtein distance with unit costs.
std::size_t edit_distance(const LabelSequence& hyp, const LabelSequence& ref);

/// 100 * total edits / total reference tokens. Throws ValidationError when the
/// references hold no tokens at all.
double token_error_rate(const std::vector<LabelSequence>& hyps, const std::vector<LabelSequence>& refs);

}  // namespace mtkd
