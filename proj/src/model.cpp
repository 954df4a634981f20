// SPDX-License-Identifier: Apache-2.0

#include "adamoe/model.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>

#include "adamoe/rng.hpp"

namespace adamoe {

void ModelConfig::validate() const {
    if (vocab_size < 1) throw std::invalid_argument("config: vocab_size must be >= 1");
    if (hidden < 1 || intermediate < 1) {
        throw std::invalid_argument("config: hidden/intermediate must be >= 1");
    }
    if (heads < 1 || hidden % heads != 0) {
        throw std::invalid_argument("config: hidden must be divisible by heads");
    }
    if (num_layers < 1) throw std::invalid_argument("config: num_layers must be >= 1");
    // a single expert is allowed only for the dense top-1 arm
    int min_experts = policy.kind == GateKind::kTop1 ? 1 : 2;
    if (num_experts < min_experts) {
        throw std::invalid_argument("config: num_experts must be >= " +
                                    std::to_string(min_experts) + " for this policy");
    }
    if (policy.threshold < 0.0 || policy.threshold > 1.0) {
        throw std::invalid_argument("config: threshold must be in [0,1]");
    }
    if (max_seq_len < 1) throw std::invalid_argument("config: max_seq_len must be >= 1");
    if (task == TaskKind::kClassification && num_classes < 2) {
        throw std::invalid_argument("config: classification needs >= 2 classes");
    }
}

Tensor multi_head_attention(const AttentionParams& p, const Tensor& x, bool causal,
                            int heads) {
    std::size_t seq = x.rows(), hidden = x.cols();
    std::size_t head_dim = hidden / static_cast<std::size_t>(heads);
    Tensor q = matmul(x, p.wq);
    Tensor k = matmul(x, p.wk);
    Tensor v = matmul(x, p.wv);

    Tensor mask;
    if (causal && seq > 1) {
        std::vector<double> m(seq * seq, 0.0);
        for (std::size_t i = 0; i < seq; ++i)
            for (std::size_t j = i + 1; j < seq; ++j) m[i * seq + j] = -1e30;
        mask = Tensor({seq, seq}, std::move(m));
    }

    std::vector<Tensor> head_outputs;
    head_outputs.reserve(static_cast<std::size_t>(heads));
    for (int h = 0; h < heads; ++h) {
        std::size_t c0 = static_cast<std::size_t>(h) * head_dim;
        Tensor qh = slice_cols(q, c0, c0 + head_dim);
        Tensor kh = slice_cols(k, c0, c0 + head_dim);
        Tensor vh = slice_cols(v, c0, c0 + head_dim);
        Tensor scores = scale(matmul(qh, transpose(kh)),
                              1.0 / std::sqrt(static_cast<double>(head_dim)));
        if (causal && seq > 1) scores = add(scores, mask);
        Tensor weights = softmax(scores, 1);
        head_outputs.push_back(matmul(weights, vh));
    }
    Tensor merged = heads == 1 ? head_outputs[0] : concat_cols(head_outputs);
    return matmul(merged, p.wo);
}

Tensor attention_forward(const BlockParams& block, const Tensor& x, bool causal,
                         int heads) {
    Tensor normed = layer_norm(x, block.ln1_gamma, block.ln1_beta);
    return add(x, multi_head_attention(block.attn, normed, causal, heads));
}

namespace {

Tensor init_weight(std::size_t rows, std::size_t cols, Rng& rng) {
    double bound = 1.0 / std::sqrt(static_cast<double>(rows));  // 1/sqrt(fan_in)
    std::vector<double> w(rows * cols);
    for (double& v : w) v = rng.uniform(-bound, bound);
    return Tensor({rows, cols}, std::move(w), true);
}

}  // namespace

Model::Model(ModelConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
    cfg_.validate();
    Rng rng(seed);
    auto reg = [this](const std::string& name, Tensor t) {
        params_.emplace_back(name, t);
        return t;
    };
    std::size_t h = static_cast<std::size_t>(cfg_.hidden);
    std::size_t m = static_cast<std::size_t>(cfg_.intermediate);
    std::size_t v = static_cast<std::size_t>(cfg_.vocab_size);
    std::size_t e = static_cast<std::size_t>(cfg_.num_experts);

    embedding_ = reg("embedding", init_weight(v, h, rng));
    pos_ = reg("pos", init_weight(static_cast<std::size_t>(cfg_.max_seq_len), h, rng));
    for (int L = 0; L < cfg_.num_layers; ++L) {
        std::string pre = "block" + std::to_string(L) + ".";
        BlockParams b;
        b.ln1_gamma = reg(pre + "ln1.gamma", Tensor({h}, 1.0, true));
        b.ln1_beta = reg(pre + "ln1.beta", Tensor({h}, 0.0, true));
        b.attn.wq = reg(pre + "attn.wq", init_weight(h, h, rng));
        b.attn.wk = reg(pre + "attn.wk", init_weight(h, h, rng));
        b.attn.wv = reg(pre + "attn.wv", init_weight(h, h, rng));
        b.attn.wo = reg(pre + "attn.wo", init_weight(h, h, rng));
        b.ln2_gamma = reg(pre + "ln2.gamma", Tensor({h}, 1.0, true));
        b.ln2_beta = reg(pre + "ln2.beta", Tensor({h}, 0.0, true));
        b.gate.wg = reg(pre + "gate.wg", init_weight(h, e, rng));
        for (int x = 0; x < cfg_.num_experts; ++x) {
            std::string ep = pre + "expert" + std::to_string(x) + ".";
            Expert ex;
            ex.w0 = reg(ep + "w0", init_weight(h, m, rng));
            ex.w1 = reg(ep + "w1", init_weight(m, h, rng));
            b.experts.push_back(std::move(ex));
        }
        blocks_.push_back(std::move(b));
    }
    final_gamma_ = reg("final.gamma", Tensor({h}, 1.0, true));
    final_beta_ = reg("final.beta", Tensor({h}, 0.0, true));
    std::size_t out_dim = cfg_.task == TaskKind::kCausalLm
                              ? v
                              : static_cast<std::size_t>(cfg_.num_classes);
    w_out_ = reg("head.w", init_weight(h, out_dim, rng));
}

ForwardRecord Model::forward(const std::vector<int>& token_ids,
                             const std::vector<std::vector<RouteChoice>>* forced) const {
    if (token_ids.empty()) throw std::invalid_argument("forward: empty sequence");
    if (static_cast<int>(token_ids.size()) > cfg_.max_seq_len) {
        throw std::invalid_argument("forward: sequence length " +
                                    std::to_string(token_ids.size()) + " exceeds max " +
                                    std::to_string(cfg_.max_seq_len));
    }
    for (int id : token_ids) {
        if (id < 0 || id >= cfg_.vocab_size) {
            throw std::invalid_argument("forward: token id " + std::to_string(id) +
                                        " outside vocabulary of " +
                                        std::to_string(cfg_.vocab_size));
        }
    }
    if (forced && forced->size() != blocks_.size()) {
        throw std::invalid_argument("forward: forced routing must cover every layer");
    }

    std::size_t seq = token_ids.size();
    std::vector<int> positions(seq);
    std::iota(positions.begin(), positions.end(), 0);
    Tensor x = add(gather_rows(embedding_, token_ids), gather_rows(pos_, positions));

    bool causal = cfg_.task == TaskKind::kCausalLm;
    ForwardRecord record;
    for (std::size_t L = 0; L < blocks_.size(); ++L) {
        const BlockParams& b = blocks_[L];
        x = attention_forward(b, x, causal, cfg_.heads);
        Tensor moe_in = layer_norm(x, b.ln2_gamma, b.ln2_beta);
        MoELayerOutput moe = moe_forward(b.experts, b.gate, cfg_.policy, moe_in,
                                         forced ? &(*forced)[L] : nullptr);
        x = add(x, moe.outputs);
        record.per_layer_top2_ratio.push_back(moe.top2_ratio);
        record.per_layer_stats.push_back(std::move(moe.stats));
        record.per_token_decisions.push_back(std::move(moe.decisions));
    }
    x = layer_norm(x, final_gamma_, final_beta_);
    if (cfg_.task == TaskKind::kCausalLm) {
        record.logits = matmul(x, w_out_);
    } else {
        record.logits = matmul(gather_rows(x, {0}), w_out_);  // start-token pooling
    }
    return record;
}

namespace {

Tensor aux_loss_sum(const ForwardRecord& record, double coeff) {
    Tensor aux = Tensor::scalar(0.0);
    bool any = false;
    for (const LoadBalanceStats& stats : record.per_layer_stats) {
        Tensor li = load_balance_loss(stats);
        aux = any ? add(aux, li) : li;
        any = true;
    }
    return scale(aux, coeff);
}

}  // namespace

Tensor Model::total_loss(const ForwardRecord& record,
                         const std::vector<int>& targets) const {
    if (cfg_.task != TaskKind::kCausalLm) {
        throw std::invalid_argument("total_loss: sequence targets need a causal LM task");
    }
    if (targets.size() != record.logits.rows()) {
        throw std::invalid_argument("total_loss: " + std::to_string(targets.size()) +
                                    " targets for " + std::to_string(record.logits.rows()) +
                                    " positions");
    }
    Tensor task = cross_entropy(record.logits, targets);
    if (cfg_.balance_coeff == 0.0) return task;
    return add(task, aux_loss_sum(record, cfg_.balance_coeff));
}

Tensor Model::total_loss(const ForwardRecord& record, int label) const {
    if (cfg_.task != TaskKind::kClassification) {
        throw std::invalid_argument("total_loss: label target needs a classification task");
    }
    Tensor task = cross_entropy(record.logits, {label});
    if (cfg_.balance_coeff == 0.0) return task;
    return add(task, aux_loss_sum(record, cfg_.balance_coeff));
}

void Model::zero_grads() {
    for (auto& [name, t] : params_) {
        (void)name;
        t.zero_grad();
    }
}

std::vector<std::vector<RouteChoice>> Model::routes_of(const ForwardRecord& record) {
    std::vector<std::vector<RouteChoice>> routes;
    routes.reserve(record.per_token_decisions.size());
    for (const auto& layer : record.per_token_decisions) {
        std::vector<RouteChoice> lr;
        lr.reserve(layer.size());
        for (const GatingDecision& d : layer) lr.push_back({d.expert_ids, d.is_top2});
        routes.push_back(std::move(lr));
    }
    return routes;
}

}  // namespace adamoe
