// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <stdexcept>

#include "adamoe/data_io.hpp"
#include "test_util.hpp"

using namespace adamoe;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() / ("adamoe_dataio_" + std::to_string(::getpid()));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string file(const std::string& name) const { return (path / name).string(); }
};

void write_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    out << content;
}

}  // namespace

TEST_CASE("load_corpus: empty file is an error") {
    TempDir tmp;
    write_file(tmp.file("empty.txt"), "");
    CHECK_THROWS_WITH_AS(load_corpus(tmp.file("empty.txt"), TaskKind::kCausalLm, 64),
                         ("empty corpus: " + tmp.file("empty.txt")).c_str(),
                         std::runtime_error);
    CHECK_THROWS_AS(load_corpus(tmp.file("missing.txt"), TaskKind::kCausalLm, 64),
                    std::runtime_error);
}

TEST_CASE("load_corpus: two-line corpus gives samples 0 and 1") {
    TempDir tmp;
    write_file(tmp.file("two.txt"), "hello world\nsecond line\n");
    Corpus c = load_corpus(tmp.file("two.txt"), TaskKind::kCausalLm, 64);
    REQUIRE(c.samples.size() == 2);
    CHECK(c.samples[0].sample_id == 0);
    CHECK(c.samples[1].sample_id == 1);
    // input starts with the start token; target is the shifted sequence
    CHECK(c.samples[0].token_ids[0] == Vocab::kStartId);
    CHECK(c.samples[0].token_ids.size() == c.samples[0].target_ids.size());
    CHECK(c.samples[0].token_ids.size() == 11);  // start + 10 of 11 chars
}

TEST_CASE("load_corpus: tokenize/detokenize round trip over every line") {
    TempDir tmp;
    testutil::write_corpus(tmp.file("gen.txt"), 40, 99);
    Corpus c = load_corpus(tmp.file("gen.txt"), TaskKind::kCausalLm, 512);
    std::ifstream in(tmp.file("gen.txt"));
    std::string line;
    std::size_t idx = 0;
    while (std::getline(in, line)) {
        REQUIRE(idx < c.samples.size());
        CHECK(c.vocab.decode(c.vocab.encode(line)) == line);
        // target_ids hold the full encoded line (start-shifted input)
        CHECK(c.vocab.decode(c.samples[idx].target_ids) == line);
        ++idx;
    }
    CHECK(idx == c.samples.size());
}

TEST_CASE("load_corpus: classification parsing and malformed lines") {
    TempDir tmp;
    write_file(tmp.file("cls.tsv"), "pos\tgreat stuff\nneg\tawful\npos\tfine again\n");
    Corpus c = load_corpus(tmp.file("cls.tsv"), TaskKind::kClassification, 64);
    REQUIRE(c.samples.size() == 3);
    CHECK(c.class_names == std::vector<std::string>{"pos", "neg"});
    CHECK(c.samples[0].label == 0);
    CHECK(c.samples[1].label == 1);
    CHECK(c.samples[2].label == 0);
    CHECK(c.samples[0].target_ids.empty());

    write_file(tmp.file("bad.tsv"), "pos\tok\nno-tab-here\n");
    try {
        load_corpus(tmp.file("bad.tsv"), TaskKind::kClassification, 64);
        FAIL("expected parse error");
    } catch (const std::runtime_error& e) {
        CHECK(std::string(e.what()).find(":2:") != std::string::npos);  // line number
    }
}

TEST_CASE("load_corpus: evaluation split reuses the training vocabulary") {
    TempDir tmp;
    write_file(tmp.file("train.txt"), "abc abc\n");
    write_file(tmp.file("val.txt"), "abz\n");  // z unseen in training
    Corpus train = load_corpus(tmp.file("train.txt"), TaskKind::kCausalLm, 64);
    Corpus val = load_corpus(tmp.file("val.txt"), TaskKind::kCausalLm, 64, train.vocab,
                             train.class_names);
    CHECK(val.vocab.size() == train.vocab.size());
    CHECK(val.samples[0].target_ids.back() == Vocab::kUnkId);
}

TEST_CASE("load_corpus: sequences clipped to max_seq_len") {
    TempDir tmp;
    write_file(tmp.file("long.txt"), std::string(500, 'a') + "\n");
    Corpus c = load_corpus(tmp.file("long.txt"), TaskKind::kCausalLm, 32);
    CHECK(c.samples[0].length() == 32);
}

TEST_CASE("make_batches: sizes 4,4,2 and order handling") {
    TempDir tmp;
    testutil::write_corpus(tmp.file("ten.txt"), 10, 5);
    Corpus c = load_corpus(tmp.file("ten.txt"), TaskKind::kCausalLm, 256);
    std::vector<int> identity{0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
    std::vector<Batch> batches = make_batches(c.samples, identity, 4, Vocab::kPadId);
    REQUIRE(batches.size() == 3);
    CHECK(batches[0].inputs.size() == 4);
    CHECK(batches[1].inputs.size() == 4);
    CHECK(batches[2].inputs.size() == 2);  // final partial batch kept
    CHECK(batches[0].sample_ids == std::vector<int>{0, 1, 2, 3});

    // identity permutation preserves file order
    std::vector<int> flat;
    for (const Batch& b : batches)
        flat.insert(flat.end(), b.sample_ids.begin(), b.sample_ids.end());
    CHECK(flat == identity);

    // any permutation carries the same multiset of samples
    std::vector<int> perm{9, 2, 4, 0, 7, 1, 3, 8, 5, 6};
    std::vector<Batch> shuffled = make_batches(c.samples, perm, 4, Vocab::kPadId);
    std::vector<int> flat2;
    for (const Batch& b : shuffled)
        flat2.insert(flat2.end(), b.sample_ids.begin(), b.sample_ids.end());
    std::sort(flat2.begin(), flat2.end());
    CHECK(flat2 == identity);

    CHECK_THROWS_AS(make_batches(c.samples, {0, 1}, 4, Vocab::kPadId),
                    std::invalid_argument);
    CHECK_THROWS_AS(make_batches(c.samples, {0, 0, 2, 3, 4, 5, 6, 7, 8, 9}, 4,
                                 Vocab::kPadId),
                    std::invalid_argument);
    CHECK_THROWS_AS(make_batches(c.samples, {0, 1, 2, 3, 4, 5, 6, 7, 8, 11}, 4,
                                 Vocab::kPadId),
                    std::invalid_argument);
}

TEST_CASE("make_batches: rows padded to the batch maximum, lengths preserved") {
    TempDir tmp;
    write_file(tmp.file("mix.txt"), "ab\nlonger line here\nxy\n");
    Corpus c = load_corpus(tmp.file("mix.txt"), TaskKind::kCausalLm, 64);
    std::vector<Batch> batches = make_batches(c.samples, {0, 1, 2}, 3, Vocab::kPadId);
    REQUIRE(batches.size() == 1);
    const Batch& b = batches[0];
    std::size_t width = b.inputs[0].size();
    for (const auto& row : b.inputs) CHECK(row.size() == width);
    // input is [start, chars...] minus the final char (nothing follows it),
    // so its length equals the char count
    CHECK(b.lengths[0] == 2);
    CHECK(b.lengths[1] == 16);
    // pad fills past the valid prefix
    for (std::size_t j = static_cast<std::size_t>(b.lengths[0]); j < width; ++j) {
        CHECK(b.inputs[0][j] == Vocab::kPadId);
    }
}

TEST_CASE("export_metrics: zero steps gives a header-only CSV") {
    TempDir tmp;
    export_metrics({}, 4, tmp.file("m.csv"), MetricsFormat::kCsv);
    std::ifstream in(tmp.file("m.csv"));
    std::string header, extra;
    CHECK(std::getline(in, header));
    CHECK(header == metrics_csv_header(4));
    CHECK_FALSE(std::getline(in, extra));
    CHECK(parse_metrics_csv(tmp.file("m.csv")).empty());
}

namespace {

std::vector<StepMetrics> sample_records() {
    std::vector<StepMetrics> records;
    Rng rng(77);
    for (int i = 0; i < 10; ++i) {
        StepMetrics m;
        m.step = i + 1;
        m.epoch = i / 5 + 1;
        m.task_loss = rng.uniform(0.5, 4.0);
        m.aux_loss = rng.uniform(0.0, 0.05);
        for (int L = 0; L < 3; ++L) m.per_layer_top2.push_back(rng.uniform());
        m.frac_top1 = rng.uniform();
        m.norm_compute = 1.0 - m.frac_top1 / 2.0;
        m.modeled_step_time = m.norm_compute + 0.1;
        records.push_back(std::move(m));
    }
    return records;
}

}  // namespace

TEST_CASE("export_metrics: CSV round trip reproduces values exactly") {
    TempDir tmp;
    auto records = sample_records();
    export_metrics(records, 3, tmp.file("m.csv"), MetricsFormat::kCsv);

    // constant field count across records
    std::ifstream in(tmp.file("m.csv"));
    std::string line;
    std::getline(in, line);
    auto commas = std::count(line.begin(), line.end(), ',');
    while (std::getline(in, line)) {
        CHECK(std::count(line.begin(), line.end(), ',') == commas);
    }

    auto parsed = parse_metrics_csv(tmp.file("m.csv"));
    REQUIRE(parsed.size() == records.size());
    for (std::size_t i = 0; i < records.size(); ++i) {
        CHECK(parsed[i].step == records[i].step);
        CHECK(parsed[i].epoch == records[i].epoch);
        CHECK(parsed[i].task_loss == records[i].task_loss);  // bit-exact
        CHECK(parsed[i].aux_loss == records[i].aux_loss);
        CHECK(parsed[i].per_layer_top2 == records[i].per_layer_top2);
        CHECK(parsed[i].frac_top1 == records[i].frac_top1);
        CHECK(parsed[i].norm_compute == records[i].norm_compute);
        CHECK(parsed[i].modeled_step_time == records[i].modeled_step_time);
    }
}

TEST_CASE("export_metrics: JSON-lines round trip reproduces values exactly") {
    TempDir tmp;
    auto records = sample_records();
    export_metrics(records, 3, tmp.file("m.jsonl"), MetricsFormat::kJsonLines);
    auto parsed = parse_metrics_jsonl(tmp.file("m.jsonl"));
    REQUIRE(parsed.size() == records.size());
    for (std::size_t i = 0; i < records.size(); ++i) {
        CHECK(parsed[i].task_loss == records[i].task_loss);
        CHECK(parsed[i].per_layer_top2 == records[i].per_layer_top2);
        CHECK(parsed[i].modeled_step_time == records[i].modeled_step_time);
    }
    CHECK_THROWS_AS(export_metrics(records, 3, "/nonexistent-dir/x.csv",
                                   MetricsFormat::kCsv),
                    std::runtime_error);
}
