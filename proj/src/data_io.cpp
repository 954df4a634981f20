// SPDX-License-Identifier: Apache-2.0

#include "adamoe/data_io.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace adamoe {

std::string format_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

namespace {

std::vector<std::string> read_lines(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open corpus file: " + path);
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        lines.push_back(line);
    }
    return lines;
}

}  // namespace

Vocab Vocab::build(const std::vector<std::string>& lines) {
    Vocab v;
    v.byte_to_id_.fill(0);
    std::set<unsigned char> seen;
    for (const std::string& line : lines) {
        for (char c : line) seen.insert(static_cast<unsigned char>(c));
    }
    for (unsigned char b : seen) {
        v.byte_to_id_[b] = static_cast<int>(v.id_to_byte_.size()) + 3;
        v.id_to_byte_.push_back(b);
    }
    return v;
}

int Vocab::id_of(unsigned char b) const {
    int id = byte_to_id_[b];
    return id == 0 ? kUnkId : id;
}

std::vector<int> Vocab::encode(const std::string& text) const {
    std::vector<int> ids;
    ids.reserve(text.size());
    for (char c : text) ids.push_back(id_of(static_cast<unsigned char>(c)));
    return ids;
}

std::string Vocab::decode(const std::vector<int>& ids) const {
    std::string out;
    out.reserve(ids.size());
    for (int id : ids) {
        if (id < 3) continue;
        std::size_t k = static_cast<std::size_t>(id - 3);
        if (k >= id_to_byte_.size()) {
            throw std::out_of_range("decode: id " + std::to_string(id) + " not in vocabulary");
        }
        out.push_back(static_cast<char>(id_to_byte_[k]));
    }
    return out;
}

namespace {

Corpus load_impl(const std::string& path, TaskKind task, int max_seq_len,
                 const Vocab* vocab, const std::vector<std::string>* class_names) {
    std::vector<std::string> lines = read_lines(path);
    std::vector<std::string> texts;
    std::vector<std::string> labels;
    if (task == TaskKind::kClassification) {
        for (std::size_t i = 0; i < lines.size(); ++i) {
            if (lines[i].empty()) continue;
            std::size_t tab = lines[i].find('\t');
            if (tab == std::string::npos || tab == 0 || tab + 1 >= lines[i].size()) {
                throw std::runtime_error(path + ":" + std::to_string(i + 1) +
                                         ": expected \"label<TAB>text\"");
            }
            labels.push_back(lines[i].substr(0, tab));
            texts.push_back(lines[i].substr(tab + 1));
        }
    } else {
        for (const std::string& line : lines) {
            if (!line.empty()) texts.push_back(line);
        }
    }
    if (texts.empty()) throw std::runtime_error("empty corpus: " + path);

    Corpus corpus;
    corpus.vocab = vocab ? *vocab : Vocab::build(texts);
    if (class_names) corpus.class_names = *class_names;

    for (std::size_t i = 0; i < texts.size(); ++i) {
        Sample s;
        s.sample_id = static_cast<int>(i);
        std::vector<int> ids = corpus.vocab.encode(texts[i]);
        // full sequence [start, c0, c1, ...], clipped to max_seq_len + 1 so the
        // model input stays within max_seq_len
        if (static_cast<int>(ids.size()) > max_seq_len) {
            ids.resize(static_cast<std::size_t>(max_seq_len));
        }
        std::vector<int> full;
        full.reserve(ids.size() + 1);
        full.push_back(Vocab::kStartId);
        full.insert(full.end(), ids.begin(), ids.end());
        if (task == TaskKind::kCausalLm) {
            s.token_ids.assign(full.begin(), full.end() - 1);
            s.target_ids.assign(full.begin() + 1, full.end());
        } else {
            s.token_ids = full;
            const std::string& name = labels[i];
            auto it = std::find(corpus.class_names.begin(), corpus.class_names.end(), name);
            if (it == corpus.class_names.end()) {
                if (class_names) {
                    throw std::runtime_error(path + ":" + std::to_string(i + 1) +
                                             ": unknown class \"" + name + "\"");
                }
                corpus.class_names.push_back(name);
                s.label = static_cast<int>(corpus.class_names.size()) - 1;
            } else {
                s.label = static_cast<int>(it - corpus.class_names.begin());
            }
        }
        corpus.samples.push_back(std::move(s));
    }
    return corpus;
}

}  // namespace

Corpus load_corpus(const std::string& path, TaskKind task, int max_seq_len) {
    return load_impl(path, task, max_seq_len, nullptr, nullptr);
}

Corpus load_corpus(const std::string& path, TaskKind task, int max_seq_len,
                   const Vocab& vocab, const std::vector<std::string>& class_names) {
    return load_impl(path, task, max_seq_len, &vocab, &class_names);
}

std::vector<Batch> make_batches(const std::vector<Sample>& samples,
                                const std::vector<int>& order, int batch_size,
                                int pad_id) {
    if (batch_size < 1) throw std::invalid_argument("make_batches: batch_size must be >= 1");
    if (order.size() != samples.size()) {
        throw std::invalid_argument("make_batches: order is not a permutation (size mismatch)");
    }
    std::vector<bool> seen(samples.size(), false);
    for (int id : order) {
        if (id < 0 || static_cast<std::size_t>(id) >= samples.size() ||
            seen[static_cast<std::size_t>(id)]) {
            throw std::invalid_argument("make_batches: order is not a permutation");
        }
        seen[static_cast<std::size_t>(id)] = true;
    }

    std::vector<Batch> batches;
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(batch_size)) {
        std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(batch_size));
        Batch b;
        int max_len = 0;
        for (std::size_t i = start; i < end; ++i) {
            const Sample& s = samples[static_cast<std::size_t>(order[i])];
            max_len = std::max(max_len, s.length());
        }
        for (std::size_t i = start; i < end; ++i) {
            const Sample& s = samples[static_cast<std::size_t>(order[i])];
            b.sample_ids.push_back(s.sample_id);
            b.lengths.push_back(s.length());
            std::vector<int> in = s.token_ids;
            in.resize(static_cast<std::size_t>(max_len), pad_id);
            b.inputs.push_back(std::move(in));
            if (!s.target_ids.empty()) {
                std::vector<int> tg = s.target_ids;
                tg.resize(static_cast<std::size_t>(max_len), pad_id);
                b.targets.push_back(std::move(tg));
            }
            b.labels.push_back(s.label);
        }
        batches.push_back(std::move(b));
    }
    return batches;
}

// ---------------------------------------------------------------------------
// metrics

std::string metrics_csv_header(int num_layers) {
    std::ostringstream os;
    os << "step,epoch,task_loss,aux_loss";
    for (int i = 0; i < num_layers; ++i) os << ",top2_ratio_layer" << i;
    os << ",frac_top1,norm_compute,modeled_step_time";
    return os.str();
}

void export_metrics(const std::vector<StepMetrics>& records, int num_layers,
                    const std::string& path, MetricsFormat format) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write metrics file: " + path);
    if (format == MetricsFormat::kCsv) {
        out << metrics_csv_header(num_layers) << "\n";
        for (const StepMetrics& m : records) {
            out << m.step << "," << m.epoch << "," << format_double(m.task_loss) << ","
                << format_double(m.aux_loss);
            for (int i = 0; i < num_layers; ++i)
                out << "," << format_double(m.per_layer_top2[static_cast<std::size_t>(i)]);
            out << "," << format_double(m.frac_top1) << "," << format_double(m.norm_compute)
                << "," << format_double(m.modeled_step_time) << "\n";
        }
    } else {
        for (const StepMetrics& m : records) {
            nlohmann::ordered_json j;
            j["schema"] = 1;
            j["step"] = m.step;
            j["epoch"] = m.epoch;
            j["task_loss"] = m.task_loss;
            j["aux_loss"] = m.aux_loss;
            j["top2_ratio_per_layer"] = m.per_layer_top2;
            j["frac_top1"] = m.frac_top1;
            j["norm_compute"] = m.norm_compute;
            j["modeled_step_time"] = m.modeled_step_time;
            out << j.dump() << "\n";
        }
    }
    if (!out) throw std::runtime_error("write failed: " + path);
}

std::vector<StepMetrics> parse_metrics_csv(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open metrics file: " + path);
    std::string header;
    if (!std::getline(in, header)) throw std::runtime_error("metrics file is empty: " + path);
    int num_fields = 1 + static_cast<int>(std::count(header.begin(), header.end(), ','));
    int num_layers = num_fields - 7;
    if (num_layers < 1 || metrics_csv_header(num_layers) != header) {
        throw std::runtime_error("unrecognized metrics header in " + path);
    }
    std::vector<StepMetrics> records;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<std::string> cells;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) cells.push_back(cell);
        if (static_cast<int>(cells.size()) != num_fields) {
            throw std::runtime_error("bad metrics record in " + path + ": " + line);
        }
        StepMetrics m;
        m.step = std::stol(cells[0]);
        m.epoch = std::stoi(cells[1]);
        m.task_loss = std::stod(cells[2]);
        m.aux_loss = std::stod(cells[3]);
        for (int i = 0; i < num_layers; ++i)
            m.per_layer_top2.push_back(std::stod(cells[static_cast<std::size_t>(4 + i)]));
        m.frac_top1 = std::stod(cells[static_cast<std::size_t>(4 + num_layers)]);
        m.norm_compute = std::stod(cells[static_cast<std::size_t>(5 + num_layers)]);
        m.modeled_step_time = std::stod(cells[static_cast<std::size_t>(6 + num_layers)]);
        records.push_back(std::move(m));
    }
    return records;
}

std::vector<StepMetrics> parse_metrics_jsonl(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open metrics file: " + path);
    std::vector<StepMetrics> records;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        nlohmann::json j = nlohmann::json::parse(line);
        StepMetrics m;
        m.step = j.at("step").get<long>();
        m.epoch = j.at("epoch").get<int>();
        m.task_loss = j.at("task_loss").get<double>();
        m.aux_loss = j.at("aux_loss").get<double>();
        m.per_layer_top2 = j.at("top2_ratio_per_layer").get<std::vector<double>>();
        m.frac_top1 = j.at("frac_top1").get<double>();
        m.norm_compute = j.at("norm_compute").get<double>();
        m.modeled_step_time = j.at("modeled_step_time").get<double>();
        records.push_back(std::move(m));
    }
    return records;
}

}  // namespace adamoe
