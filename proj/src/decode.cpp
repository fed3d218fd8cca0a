#include "mtkd/decode.hpp"

#include <algorithm>

namespace mtkd {
namespace {

struct BeamHyp {
    LabelSequence tokens;
    double score = 0.0;
    std::vector<double> state;
};

// Higher score first; ties broken lexicographically on tokens.
bool ranks_before(double score_a, const LabelSequence& a, double score_b, const LabelSequence& b) {
    if (score_a != score_b) return score_a > score_b;
    return std::lexicographical_compare(a.begin(), a.end(), b.begin(), b.end());
}

void merge_finished(std::vector<BeamHyp>& finished, const BeamHyp& source, double score) {
    for (auto& f : finished) {
        if (f.tokens == source.tokens) {
            if (score > f.score) f.score = score;
            return;
        }
    }
    finished.push_back({source.tokens, score, source.state});
}

void check_inputs(const Matrix& encoder_out, int max_symbols_per_frame) {
    if (encoder_out.rows() < 1) throw ValidationError("decode: encoder output has no frames");
    if (max_symbols_per_frame < 0) {
        throw PreconditionError("decode: max_symbols_per_frame must be >= 0");
    }
}

}  // namespace

Hypothesis greedy_decode(const Matrix& encoder_out, const JointScorer& scorer,
                         int max_symbols_per_frame) {
    check_inputs(encoder_out, max_symbols_per_frame);
    const std::size_t V = scorer.vocab_size();
    std::vector<double> lp(V);
    std::vector<double> state = scorer.initial_state();
    Hypothesis hyp;
    for (Eigen::Index t = 0; t < encoder_out.rows(); ++t) {
        std::span<const double> frame(encoder_out.row(t).data(),
                                      static_cast<std::size_t>(encoder_out.cols()));
        for (int s = 0;; ++s) {
            scorer.log_probs(frame, state, lp);
            std::size_t best = kBlank;
            if (s < max_symbols_per_frame) {
                for (std::size_t k = 1; k < V; ++k) {
                    if (lp[k] > lp[best]) best = k;
                }
            }
            hyp.score += lp[best];
            if (best == kBlank) break;
            hyp.tokens.push_back(static_cast<int>(best));
            state = scorer.advance(state, static_cast<int>(best));
        }
    }
    return hyp;
}

Hypothesis beam_search_decode(const Matrix& encoder_out, const JointScorer& scorer, int beam,
                              int max_symbols_per_frame) {
    if (beam < 1) throw PreconditionError("decode: beam must be >= 1");
    check_inputs(encoder_out, max_symbols_per_frame);
    const std::size_t V = scorer.vocab_size();
    const auto width = static_cast<std::size_t>(beam);
    std::vector<double> lp(V);

    std::vector<BeamHyp> beams{{{}, 0.0, scorer.initial_state()}};
    for (Eigen::Index t = 0; t < encoder_out.rows(); ++t) {
        std::span<const double> frame(encoder_out.row(t).data(),
                                      static_cast<std::size_t>(encoder_out.cols()));
        std::vector<BeamHyp> finished;
        std::vector<BeamHyp> active = std::move(beams);

        for (int s = 0; !active.empty(); ++s) {
            struct Extension {
                double score;
                std::size_t parent;
                int token;
                LabelSequence tokens;
            };
            std::vector<Extension> extensions;
            for (std::size_t i = 0; i < active.size(); ++i) {
                const BeamHyp& h = active[i];
                scorer.log_probs(frame, h.state, lp);
                merge_finished(finished, h, h.score + lp[kBlank]);
                if (s < max_symbols_per_frame) {
                    for (std::size_t k = 1; k < V; ++k) {
                        LabelSequence tokens = h.tokens;
                        tokens.push_back(static_cast<int>(k));
                        extensions.push_back({h.score + lp[k], i, static_cast<int>(k),
                                              std::move(tokens)});
                    }
                }
            }

            // Rank finished and still-active hypotheses together, keep the top `width`.
            struct PoolEntry {
                double score;
                const LabelSequence* tokens;
                bool is_finished;
                std::size_t index;
            };
            std::vector<PoolEntry> pool;
            pool.reserve(finished.size() + extensions.size());
            for (std::size_t i = 0; i < finished.size(); ++i) {
                pool.push_back({finished[i].score, &finished[i].tokens, true, i});
            }
            for (std::size_t i = 0; i < extensions.size(); ++i) {
                pool.push_back({extensions[i].score, &extensions[i].tokens, false, i});
            }
            std::stable_sort(pool.begin(), pool.end(), [](const PoolEntry& a, const PoolEntry& b) {
                if (a.score != b.score || *a.tokens != *b.tokens) {
                    return ranks_before(a.score, *a.tokens, b.score, *b.tokens);
                }
                return a.is_finished && !b.is_finished;
            });
            if (pool.size() > width) pool.resize(width);

            std::vector<BeamHyp> kept_finished;
            std::vector<BeamHyp> next_active;
            for (const auto& entry : pool) {
                if (entry.is_finished) {
                    kept_finished.push_back(std::move(finished[entry.index]));
                } else {
                    Extension& ext = extensions[entry.index];
                    next_active.push_back({std::move(ext.tokens), ext.score,
                                           scorer.advance(active[ext.parent].state, ext.token)});
                }
            }
            finished = std::move(kept_finished);
            active = std::move(next_active);
        }
        beams = std::move(finished);
    }

    const auto best = std::min_element(beams.begin(), beams.end(), [](const auto& a, const auto& b) {
        return ranks_before(a.score, a.tokens, b.score, b.tokens);
    });
    return {best->tokens, best->score};
}

std::size_t edit_distance(const LabelSequence& hyp, const LabelSequence& ref) {
    std::vector<std::size_t> row(ref.size() + 1);
    for (std::size_t j = 0; j <= ref.size(); ++j) row[j] = j;
    for (std::size_t i = 1; i <= hyp.size(); ++i) {
        std::size_t diag = row[0];
        row[0] = i;
        for (std::size_t j = 1; j <= ref.size(); ++j) {
            const std::size_t up = row[j];
            row[j] = std::min({up + 1, row[j - 1] + 1, diag + (hyp[i - 1] == ref[j - 1] ? 0u : 1u)});
            diag = up;
        }
    }
    return row[ref.size()];
}

double token_error_rate(const std::vector<LabelSequence>& hyps, const std::vector<LabelSequence>& refs) {
    if (hyps.size() != refs.size()) throw ShapeError("ter: hypothesis and reference counts differ");
    std::size_t edits = 0;
    std::size_t words = 0;
    for (std::size_t i = 0; i < refs.size(); ++i) {
        edits += edit_distance(hyps[i], refs[i]);
        words += refs[i].size();
    }
    if (words == 0) throw ValidationError("ter: references contain no tokens");
    return 100.0 * static_cast<double>(edits) / static_cast<double>(words);
}

}  // namespace mtkd
