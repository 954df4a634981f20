// SPDX-License-Identifier: Apache-2.0
//
// Sample complexity vectors (per-layer top-2 token ratios) and the
// cosine-similarity reordering of training data around a least-complex
// anchor.

#pragma once

#include <cstdint>
#include <vector>

#include "adamoe/moe.hpp"

namespace adamoe {

struct ComplexityVector {
    int sample_id = 0;
    std::vector<double> r;  // one entry per MoE layer, each in [0,1]
    int seq_len = 1;
};

/// Anchor metric: total top-2 token count across layers (default), or the
/// mean per-layer ratio.
enum class AnchorMetric { kTotalCount, kMeanRatio };

/// r[i] = (# top-2 tokens at layer i) / seq_len for one sample.
/// decisions: [layer][token] for that sample.
ComplexityVector complexity_vector(
    const std::vector<std::vector<GatingDecision>>& decisions, int num_layers,
    int seq_len, int sample_id);

/// Same, from precounted per-layer top-2 totals.
ComplexityVector complexity_from_counts(const std::vector<int>& top2_counts,
                                        int seq_len, int sample_id);

/// Sample with the fewest top-2-processed tokens; ties to the lowest id.
int select_anchor(const std::vector<ComplexityVector>& vectors,
                  AnchorMetric metric = AnchorMetric::kTotalCount);

/// a.b / (|a||b|); 1.0 when both are zero vectors, 0.0 when exactly one is.
double cosine_similarity(const ComplexityVector& a, const ComplexityVector& b);

/// Anchor first, the rest by descending similarity to the anchor, ties by
/// ascending sample id. Returns a permutation of the sample ids.
std::vector<int> reorder(const std::vector<ComplexityVector>& vectors,
                         AnchorMetric metric = AnchorMetric::kTotalCount);

/// Batch order for an epoch (samples are 0..num_samples-1). Epoch 1 is always
/// corpus order; later epochs reorder() by the previous epoch's complexity
/// vectors, or use a seeded shuffle when the curriculum is disabled.
std::vector<int> epoch_schedule(int epoch, bool curriculum_enabled,
                                int num_samples, std::uint64_t seed,
                                const std::vector<ComplexityVector>* prev_vectors,
                                AnchorMetric metric = AnchorMetric::kTotalCount);

}  // namespace adamoe
