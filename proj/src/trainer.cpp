// SPDX-License-Identifier: Apache-2.0

#include "adamoe/trainer.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "adamoe/checkpoint.hpp"
#include "adamoe/cost_model.hpp"

namespace adamoe {

void AdamOptimizer::step(const std::vector<std::pair<std::string, Tensor>>& params) {
    if (m_.empty()) {
        m_.resize(params.size());
        v_.resize(params.size());
        for (std::size_t i = 0; i < params.size(); ++i) {
            m_[i].assign(params[i].second.size(), 0.0);
            v_[i].assign(params[i].second.size(), 0.0);
        }
    }
    ++t_;
    double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor p = params[i].second;
        const std::vector<double>* g = p.has_grad() ? &p.grad() : nullptr;
        auto& m = m_[i];
        auto& v = v_[i];
        for (std::size_t k = 0; k < p.size(); ++k) {
            double gk = g ? (*g)[k] : 0.0;
            m[k] = cfg_.beta1 * m[k] + (1.0 - cfg_.beta1) * gk;
            v[k] = cfg_.beta2 * v[k] + (1.0 - cfg_.beta2) * gk * gk;
            double mhat = m[k] / bc1;
            double vhat = v[k] / bc2;
            p.values()[k] -= cfg_.learning_rate * mhat / (std::sqrt(vhat) + cfg_.eps);
        }
    }
}

TrainStepResult train_step(Model& model, AdamOptimizer& opt, const Batch& batch,
                           double overhead_share, long step_index, int epoch,
                           bool collect_decisions) {
    const ModelConfig& cfg = model.config();
    if (batch.inputs.empty()) throw std::invalid_argument("train_step: empty batch");

    model.zero_grads();

    long total_tokens = 0;
    for (int len : batch.lengths) total_tokens += len;

    Tensor task_loss = Tensor::scalar(0.0);
    std::vector<std::vector<LoadBalanceStats>> layer_stats(
        static_cast<std::size_t>(cfg.num_layers));
    std::vector<std::vector<GatingDecision>> all_decisions(
        static_cast<std::size_t>(cfg.num_layers));

    TrainStepResult result;
    for (std::size_t s = 0; s < batch.inputs.size(); ++s) {
        int len = batch.lengths[s];
        std::vector<int> ids(batch.inputs[s].begin(), batch.inputs[s].begin() + len);
        ForwardRecord record = model.forward(ids);

        Tensor seq_loss;
        if (cfg.task == TaskKind::kCausalLm) {
            std::vector<int> targets(batch.targets[s].begin(),
                                     batch.targets[s].begin() + len);
            // per-sequence CE is a token mean; reweight so the batch loss is the
            // mean over all tokens in the batch
            seq_loss = scale(cross_entropy(record.logits, targets),
                             static_cast<double>(len) / static_cast<double>(total_tokens));
        } else {
            seq_loss = scale(cross_entropy(record.logits, {batch.labels[s]}),
                             1.0 / static_cast<double>(batch.inputs.size()));
        }
        task_loss = s == 0 ? seq_loss : add(task_loss, seq_loss);

        SampleRouting routing;
        routing.sample_id = batch.sample_ids[s];
        routing.seq_len = len;
        for (int L = 0; L < cfg.num_layers; ++L) {
            auto Lz = static_cast<std::size_t>(L);
            layer_stats[Lz].push_back(record.per_layer_stats[Lz]);
            int top2 = 0;
            for (std::size_t ti = 0; ti < record.per_token_decisions[Lz].size(); ++ti) {
                const GatingDecision& d = record.per_token_decisions[Lz][ti];
                if (d.is_top2) ++top2;
                if (collect_decisions) {
                    result.decisions.push_back({step_index, L, batch.sample_ids[s],
                                                static_cast<int>(ti), d.is_top2,
                                                d.expert_ids[0],
                                                d.is_top2 ? d.expert_ids[1] : -1});
                }
                all_decisions[Lz].push_back(d);
            }
            routing.top2_counts.push_back(top2);
        }
        result.routing.push_back(std::move(routing));
    }

    // batch-level balance loss: p_e averaged over all tokens of the batch
    Tensor aux = Tensor::scalar(0.0);
    for (int L = 0; L < cfg.num_layers; ++L) {
        Tensor li = load_balance_loss(merge_stats(layer_stats[static_cast<std::size_t>(L)]));
        aux = L == 0 ? li : add(aux, li);
    }
    Tensor total = cfg.balance_coeff == 0.0
                       ? task_loss
                       : add(task_loss, scale(aux, cfg.balance_coeff));

    if (!std::isfinite(total.item())) {
        throw std::runtime_error("training aborted: non-finite loss at step " +
                                 std::to_string(step_index) + " (epoch " +
                                 std::to_string(epoch) + ", task=" +
                                 format_double(task_loss.item()) + ", aux=" +
                                 format_double(aux.item()) + ")");
    }

    backward(total);
    opt.step(model.parameters());

    CostReport cost = batch_cost(all_decisions, cfg.hidden, cfg.intermediate,
                                 overhead_share);
    StepMetrics& m = result.metrics;
    m.step = step_index;
    m.epoch = epoch;
    m.task_loss = task_loss.item();
    m.aux_loss = cfg.balance_coeff == 0.0 ? 0.0 : cfg.balance_coeff * aux.item();
    for (int L = 0; L < cfg.num_layers; ++L) {
        long top2 = 0;
        for (const SampleRouting& r : result.routing)
            top2 += r.top2_counts[static_cast<std::size_t>(L)];
        m.per_layer_top2.push_back(static_cast<double>(top2) /
                                   static_cast<double>(total_tokens));
    }
    m.frac_top1 = cost.frac_top1;
    m.norm_compute = cost.norm_compute;
    m.modeled_step_time = cost.modeled_step_time;
    result.batch_expert_flops = cost.batch_expert_flops;
    return result;
}

double evaluate(Model& model, const std::vector<Sample>& samples,
                const std::string& eval_policy) {
    RoutingPolicy saved = model.config().policy;
    if (eval_policy == "top1") {
        model.mutable_config().policy.kind = GateKind::kTop1;
    } else if (eval_policy != "same") {
        throw std::invalid_argument("evaluate: eval_policy must be \"same\" or \"top1\"");
    }
    double loss_sum = 0.0;
    long tokens = 0;
    for (const Sample& s : samples) {
        ForwardRecord record = model.forward(s.token_ids);
        if (model.config().task == TaskKind::kCausalLm) {
            Tensor ce = cross_entropy(record.logits, s.target_ids);
            loss_sum += ce.item() * static_cast<double>(s.length());
            tokens += s.length();
        } else {
            loss_sum += cross_entropy(record.logits, {s.label}).item();
            tokens += 1;
        }
    }
    model.mutable_config().policy = saved;
    return tokens == 0 ? 0.0 : loss_sum / static_cast<double>(tokens);
}

TrainResult run_training(const RunConfig& cfg) {
    cfg.validate();
    namespace fs = std::filesystem;

    Corpus train = load_corpus(cfg.train_corpus, cfg.task, cfg.max_seq_len);
    std::optional<Corpus> val;
    if (!cfg.val_corpus.empty()) {
        val = load_corpus(cfg.val_corpus, cfg.task, cfg.max_seq_len, train.vocab,
                          train.class_names);
    }

    int num_classes = std::max<int>(2, static_cast<int>(train.class_names.size()));
    Model model(cfg.model_config(train.vocab.size(), num_classes), cfg.seed);
    AdamOptimizer opt(OptimizerConfig{cfg.learning_rate, 0.9, 0.999, 1e-8});
    double omega = fit_overhead_share(reference_pairs()).overhead_share;

    fs::create_directories(cfg.output_dir);
    auto out_path = [&](const std::string& name) {
        return (fs::path(cfg.output_dir) / name).string();
    };
    {
        std::ofstream cfg_out(out_path("config.json"), std::ios::binary);
        if (!cfg_out) throw std::runtime_error("cannot write " + out_path("config.json"));
        cfg_out << cfg.to_json();
    }
    std::ofstream schedule_out(out_path("schedule.txt"), std::ios::binary);
    if (!schedule_out) throw std::runtime_error("cannot write " + out_path("schedule.txt"));

    int n_samples = static_cast<int>(train.samples.size());
    TrainResult result;
    result.run_dir = cfg.output_dir;
    result.num_layers = cfg.num_layers;
    result.steps_per_epoch =
        (n_samples + cfg.batch_size - 1) / cfg.batch_size;

    std::vector<StepMetrics> metrics;
    std::vector<DecisionRow> decision_rows;
    std::vector<ComplexityVector> prev_cv;
    long step_index = 0;
    double frac_top1_sum = 0.0;
    double last_epoch_task_sum = 0.0;
    long last_epoch_steps = 0;

    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        std::vector<int> order =
            epoch_schedule(epoch, cfg.curriculum_enabled, n_samples, cfg.seed,
                           prev_cv.empty() ? nullptr : &prev_cv, cfg.anchor_metric);
        schedule_out << "epoch " << epoch << ":";
        for (int id : order) schedule_out << " " << id;
        schedule_out << "\n";
        schedule_out.flush();

        std::vector<Batch> batches =
            make_batches(train.samples, order, cfg.batch_size, Vocab::kPadId);

        std::vector<ComplexityVector> epoch_cv(static_cast<std::size_t>(n_samples));
        bool collect = cfg.dump_decisions && epoch == cfg.epochs;
        last_epoch_task_sum = 0.0;
        last_epoch_steps = 0;
        for (const Batch& b : batches) {
            ++step_index;
            TrainStepResult r =
                train_step(model, opt, b, omega, step_index, epoch, collect);
            frac_top1_sum += r.metrics.frac_top1;
            result.mean_frac_top2 += 1.0 - r.metrics.frac_top1;
            result.total_expert_flops += r.batch_expert_flops;
            last_epoch_task_sum += r.metrics.task_loss;
            ++last_epoch_steps;
            for (const SampleRouting& sr : r.routing) {
                epoch_cv[static_cast<std::size_t>(sr.sample_id)] =
                    complexity_from_counts(sr.top2_counts, sr.seq_len, sr.sample_id);
            }
            if (collect) {
                decision_rows.insert(decision_rows.end(), r.decisions.begin(),
                                     r.decisions.end());
            }
            metrics.push_back(std::move(r.metrics));
        }
        prev_cv = std::move(epoch_cv);

        if (val) {
            double vl = evaluate(model, val->samples, cfg.eval_policy);
            result.val_loss_per_epoch.push_back(vl);
        }
    }
    result.total_steps = step_index;
    if (step_index > 0) {
        result.mean_frac_top1 = frac_top1_sum / static_cast<double>(step_index);
        result.mean_frac_top2 /= static_cast<double>(step_index);
    }
    result.final_train_loss =
        last_epoch_steps > 0 ? last_epoch_task_sum / static_cast<double>(last_epoch_steps)
                             : 0.0;
    if (!result.val_loss_per_epoch.empty()) {
        result.final_val_loss = result.val_loss_per_epoch.back();
    }

    std::string metrics_name =
        cfg.metrics_format == MetricsFormat::kCsv ? "metrics.csv" : "metrics.jsonl";
    export_metrics(metrics, cfg.num_layers, out_path(metrics_name), cfg.metrics_format);

    if (val) {
        std::ofstream vout(out_path("val.csv"), std::ios::binary);
        vout << "epoch,val_loss\n";
        for (std::size_t e = 0; e < result.val_loss_per_epoch.size(); ++e) {
            vout << (e + 1) << "," << format_double(result.val_loss_per_epoch[e]) << "\n";
        }
    }
    if (cfg.dump_decisions) {
        std::ofstream dout(out_path("decisions.csv"), std::ios::binary);
        dout << "step,layer,sample_id,position,is_top2,expert0,expert1\n";
        for (const DecisionRow& d : decision_rows) {
            dout << d.step << "," << d.layer << "," << d.sample_id << "," << d.position
                 << "," << (d.is_top2 ? 1 : 0) << "," << d.expert0 << "," << d.expert1
                 << "\n";
        }
    }
    save_checkpoint(out_path("checkpoint.bin"), cfg.to_json(), model.parameters());
    return result;
}

}  // namespace adamoe
