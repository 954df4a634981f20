// SPDX-License-Identifier: Apache-2.0

#include "adamoe/curriculum.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "adamoe/rng.hpp"

namespace adamoe {

ComplexityVector complexity_vector(
    const std::vector<std::vector<GatingDecision>>& decisions, int num_layers,
    int seq_len, int sample_id) {
    if (seq_len < 1) throw std::invalid_argument("complexity_vector: seq_len must be >= 1");
    if (decisions.size() != static_cast<std::size_t>(num_layers)) {
        throw std::invalid_argument("complexity_vector: layer count mismatch");
    }
    ComplexityVector cv;
    cv.sample_id = sample_id;
    cv.seq_len = seq_len;
    cv.r.reserve(static_cast<std::size_t>(num_layers));
    for (const auto& layer : decisions) {
        int top2 = 0;
        for (const GatingDecision& d : layer) top2 += d.is_top2 ? 1 : 0;
        cv.r.push_back(static_cast<double>(top2) / static_cast<double>(seq_len));
    }
    return cv;
}

ComplexityVector complexity_from_counts(const std::vector<int>& top2_counts,
                                        int seq_len, int sample_id) {
    if (seq_len < 1) throw std::invalid_argument("complexity_from_counts: seq_len must be >= 1");
    ComplexityVector cv;
    cv.sample_id = sample_id;
    cv.seq_len = seq_len;
    cv.r.reserve(top2_counts.size());
    for (int c : top2_counts)
        cv.r.push_back(static_cast<double>(c) / static_cast<double>(seq_len));
    return cv;
}

namespace {

double anchor_score(const ComplexityVector& v, AnchorMetric metric) {
    double total = 0.0;
    for (double ri : v.r) total += ri;
    if (metric == AnchorMetric::kTotalCount) {
        return total * static_cast<double>(v.seq_len);
    }
    return v.r.empty() ? 0.0 : total / static_cast<double>(v.r.size());
}

}  // namespace

int select_anchor(const std::vector<ComplexityVector>& vectors, AnchorMetric metric) {
    if (vectors.empty()) throw std::invalid_argument("select_anchor: empty vector list");
    int best_id = vectors[0].sample_id;
    double best = anchor_score(vectors[0], metric);
    for (std::size_t i = 1; i < vectors.size(); ++i) {
        double s = anchor_score(vectors[i], metric);
        if (s < best || (s == best && vectors[i].sample_id < best_id)) {
            best = s;
            best_id = vectors[i].sample_id;
        }
    }
    return best_id;
}

double cosine_similarity(const ComplexityVector& a, const ComplexityVector& b) {
    if (a.r.size() != b.r.size()) {
        throw std::invalid_argument("cosine_similarity: length mismatch");
    }
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.r.size(); ++i) {
        dot += a.r[i] * b.r[i];
        na += a.r[i] * a.r[i];
        nb += b.r[i] * b.r[i];
    }
    if (na == 0.0 && nb == 0.0) return 1.0;
    if (na == 0.0 || nb == 0.0) return 0.0;
    return dot / (std::sqrt(na) * std::sqrt(nb));
}

std::vector<int> reorder(const std::vector<ComplexityVector>& vectors,
                         AnchorMetric metric) {
    if (vectors.empty()) throw std::invalid_argument("reorder: empty vector list");
    int anchor_id = select_anchor(vectors, metric);
    const ComplexityVector* anchor = nullptr;
    for (const auto& v : vectors)
        if (v.sample_id == anchor_id) anchor = &v;

    struct Entry {
        double sim;
        int id;
    };
    std::vector<Entry> rest;
    rest.reserve(vectors.size() - 1);
    for (const auto& v : vectors) {
        if (v.sample_id == anchor_id) continue;
        rest.push_back({cosine_similarity(v, *anchor), v.sample_id});
    }
    std::stable_sort(rest.begin(), rest.end(), [](const Entry& a, const Entry& b) {
        if (a.sim != b.sim) return a.sim > b.sim;
        return a.id < b.id;
    });

    std::vector<int> order;
    order.reserve(vectors.size());
    order.push_back(anchor_id);
    for (const Entry& e : rest) order.push_back(e.id);
    return order;
}

std::vector<int> epoch_schedule(int epoch, bool curriculum_enabled, int num_samples,
                                std::uint64_t seed,
                                const std::vector<ComplexityVector>* prev_vectors,
                                AnchorMetric metric) {
    if (num_samples < 1) throw std::invalid_argument("epoch_schedule: no samples");
    std::vector<int> order(static_cast<std::size_t>(num_samples));
    std::iota(order.begin(), order.end(), 0);
    if (epoch <= 1) return order;  // no routing stats exist yet

    if (!curriculum_enabled) {
        Rng rng(seed ^ (0x9e3779b97f4a7c15ULL * static_cast<std::uint64_t>(epoch)));
        rng.shuffle(order);
        return order;
    }
    if (!prev_vectors || prev_vectors->size() != static_cast<std::size_t>(num_samples)) {
        throw std::invalid_argument(
            "epoch_schedule: previous-epoch complexity vectors do not match sample count");
    }
    return reorder(*prev_vectors, metric);
}

}  // namespace adamoe
