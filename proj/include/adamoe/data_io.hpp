// SPDX-License-Identifier: Apache-2.0
//
// Corpus ingestion (character-level, byte vocabulary), batching with
// in-batch padding, and the step-metrics stream (CSV or JSON lines).

#pragma once

#include <array>
#include <string>
#include <vector>

namespace adamoe {

enum class TaskKind { kCausalLm, kClassification };

/// Byte-level vocabulary with pad/start/unknown specials. Bijective between
/// data symbols and ids; unseen bytes encode to unk.
class Vocab {
public:
    static constexpr int kPadId = 0;
    static constexpr int kStartId = 1;
    static constexpr int kUnkId = 2;

    static Vocab build(const std::vector<std::string>& lines);

    int size() const { return static_cast<int>(id_to_byte_.size()) + 3; }
    int id_of(unsigned char b) const;  // kUnkId when absent
    std::vector<int> encode(const std::string& text) const;
    std::string decode(const std::vector<int>& ids) const;  // specials skipped

private:
    std::vector<unsigned char> id_to_byte_;       // data symbols, ids 3..
    std::array<int, 256> byte_to_id_{};           // 0 = absent
};

struct Sample {
    int sample_id = 0;
    std::vector<int> token_ids;   // model input, starts with the start token
    std::vector<int> target_ids;  // causal LM: token_ids shifted by one
    int label = -1;               // classification only
    int length() const { return static_cast<int>(token_ids.size()); }
};

struct Corpus {
    std::vector<Sample> samples;
    Vocab vocab;
    std::vector<std::string> class_names;  // classification only, first-seen order
};

/// Line-oriented corpus: one sample per line (causal LM) or
/// "label<TAB>text" (classification). Builds the vocabulary from this file;
/// pass an existing corpus' vocab (and classes) for an evaluation split.
Corpus load_corpus(const std::string& path, TaskKind task, int max_seq_len);
Corpus load_corpus(const std::string& path, TaskKind task, int max_seq_len,
                   const Vocab& vocab, const std::vector<std::string>& class_names);

/// Rectangular batch; rows are padded with pad_id past each sample's length.
struct Batch {
    std::vector<int> sample_ids;
    std::vector<std::vector<int>> inputs;   // [B][max_len]
    std::vector<std::vector<int>> targets;  // causal LM only
    std::vector<int> lengths;               // valid prefix per row
    std::vector<int> labels;                // classification only
};

/// Contiguous slices of the ordered sample list; final partial batch kept.
std::vector<Batch> make_batches(const std::vector<Sample>& samples,
                                const std::vector<int>& order, int batch_size,
                                int pad_id);

/// One record per optimizer step; schema v1, see README.
struct StepMetrics {
    long step = 0;
    int epoch = 0;
    double task_loss = 0.0;
    double aux_loss = 0.0;
    std::vector<double> per_layer_top2;
    double frac_top1 = 0.0;
    double norm_compute = 1.0;
    double modeled_step_time = 1.0;
};

enum class MetricsFormat { kCsv, kJsonLines };

/// %.17g — shortest exact round trip, stable across runs.
std::string format_double(double v);

std::string metrics_csv_header(int num_layers);
void export_metrics(const std::vector<StepMetrics>& records, int num_layers,
                    const std::string& path, MetricsFormat format);
std::vector<StepMetrics> parse_metrics_csv(const std::string& path);
std::vector<StepMetrics> parse_metrics_jsonl(const std::string& path);

}  // namespace adamoe
