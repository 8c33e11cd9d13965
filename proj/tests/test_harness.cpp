#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "slukd/checkpoint.hpp"
#include "slukd/harness.hpp"

using namespace slukd;
using namespace slukd::corpus;
using namespace slukd::harness;

namespace {

struct SmallWorld {
    Grammar grammar = Grammar::build(Grammar::default_config());
    Dataset train, test;
    NoiseChannel channel;

    SmallWorld() {
        Dataset all = generate(grammar, 240, 101);
        Split s = split(all, 0.6, 0.0, 0.4, 102);
        channel = NoiseChannel::default_for(grammar.vocab_size());
        train = render_frames(s.train, channel, 103);
        test = render_frames(s.test, channel, 104);
    }

    TeacherTrainConfig tiny_teacher_cfg(HeadKind k) const {
        TeacherTrainConfig cfg;
        cfg.variant = k;
        cfg.epochs = 8;
        cfg.batch_size = 32;
        cfg.seed = 105;
        cfg.d_model = 16;
        cfg.n_layers = 1;
        cfg.n_heads = 2;
        cfg.ff_dim = 24;
        return cfg;
    }

    DistillConfig tiny_distill_cfg() const {
        DistillConfig cfg;
        cfg.epochs = 3;
        cfg.batch_size = 16;
        cfg.seed = 106;
        cfg.hidden = 16;
        cfg.slots = grammar.slots();
        return cfg;
    }
};

SmallWorld& world() {
    static SmallWorld w;
    return w;
}

std::string file_contents(const std::string& path) {
    std::ifstream in(path);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::vector<double> flat_params(StudentModel& m) {
    std::vector<double> out;
    m.visit_params([&](const std::string&, Tensor& t) {
        out.insert(out.end(), t.data.begin(), t.data.end());
    });
    return out;
}

std::vector<double> flat_params(TextEncoderModel& m) {
    std::vector<double> out;
    m.visit_params([&](const std::string&, Tensor& t) {
        out.insert(out.end(), t.data.begin(), t.data.end());
    });
    return out;
}

}  // namespace

TEST_CASE("zero-epoch teacher training returns an untrained chance-level model") {
    SmallWorld& w = world();
    TeacherTrainConfig cfg = w.tiny_teacher_cfg(HeadKind::ClsPooled);
    cfg.epochs = 0;
    TeacherRun run = train_teacher(cfg, w.train, w.test, w.grammar.slots(), w.grammar.vocab_size());
    CHECK(run.result.train_error_trace.empty());
    CHECK_FALSE(run.result.converged);
    // chance level is roughly 1 - 1/#intents
    CHECK(run.result.test.full >= 0.85);
}

TEST_CASE("detect_nonconvergence: trained, flat, and NaN traces") {
    CHECK_FALSE(detect_nonconvergence({0.9, 0.4, 0.1, 0.01}, false));
    CHECK(detect_nonconvergence({0.97, 0.96, 0.968, 0.97}, false));
    CHECK(detect_nonconvergence({0.9, 0.4, 0.1}, true));  // NaN mid-run
    CHECK(detect_nonconvergence({}, false));
}

TEST_CASE("score_predictions: oracle, constant predictor, union bound") {
    SmallWorld& w = world();
    std::vector<SlotLabel> perfect;
    for (const Example& e : w.test) perfect.push_back(e.label);
    ErrorRates zero = score_predictions(perfect, w.test);
    CHECK(zero.full == 0.0);
    CHECK(zero.action == 0.0);

    // constant prediction: error = 1 - frequency of the modal intent
    std::map<std::tuple<int, int, int>, int> freq;
    for (const Example& e : w.test) ++freq[{e.label.action, e.label.object, e.label.location}];
    auto modal = std::max_element(freq.begin(), freq.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second < b.second;
        return b.first < a.first;
    });
    SlotLabel constant{std::get<0>(modal->first), std::get<1>(modal->first),
                       std::get<2>(modal->first)};
    std::vector<SlotLabel> constant_preds(w.test.size(), constant);
    ErrorRates c = score_predictions(constant_preds, w.test);
    CHECK(c.full ==
          doctest::Approx(1.0 - static_cast<double>(modal->second) / w.test.size()).epsilon(1e-12));

    CHECK(c.full >= c.action);
    CHECK(c.full >= c.object);
    CHECK(c.full >= c.location);
}

TEST_CASE("export_logits: bit-exact round trip, full id coverage, idempotent re-export") {
    SmallWorld& w = world();
    TeacherRun run = train_teacher(w.tiny_teacher_cfg(HeadKind::ClsPooled), w.train, {},
                                   w.grammar.slots(), w.grammar.vocab_size());
    LogitTable in_memory = logits_from_model(run.model, w.test);
    const std::string path = "harness_logits_test.jsonl";
    export_logits(run.model, w.test, path);
    LogitTable from_file = read_logits(path, w.grammar.slots());

    REQUIRE(from_file.size() == w.test.size());
    for (const Example& e : w.test) {
        REQUIRE(from_file.count(e.id));
        const SlotLogits& a = in_memory.at(e.id);
        const SlotLogits& b = from_file.at(e.id);
        CHECK(a.action == b.action);  // bit-exact doubles via the JSON round trip
        CHECK(a.object == b.object);
        CHECK(a.location == b.location);
    }

    const std::string first = file_contents(path);
    export_logits(run.model, w.test, path);
    CHECK(file_contents(path) == first);
    std::remove(path.c_str());
}

TEST_CASE("distill with Fixed(0) is bit-identical to the CE-only baseline") {
    SmallWorld& w = world();
    TeacherRun teacher = train_teacher(w.tiny_teacher_cfg(HeadKind::ClsPooled), w.train, {},
                                       w.grammar.slots(), w.grammar.vocab_size());
    LogitTable table = logits_from_model(teacher.model, w.train);

    DistillConfig kd = w.tiny_distill_cfg();
    kd.gamma_mode = GammaMode::Teacher;
    kd.schedule = Schedule::fixed(0.0);
    DistillRun with_kd = distill(kd, w.train, w.test, &table, nullptr);

    DistillConfig plain = w.tiny_distill_cfg();
    plain.gamma_mode = GammaMode::None;
    DistillRun baseline = distill(plain, w.train, w.test, nullptr, nullptr);

    CHECK(flat_params(with_kd.model) == flat_params(baseline.model));  // bitwise
    CHECK(with_kd.result.test.full == baseline.result.test.full);
}

TEST_CASE("distill: missing logits for a training id is a hard error") {
    SmallWorld& w = world();
    TeacherRun teacher = train_teacher(w.tiny_teacher_cfg(HeadKind::ClsPooled), w.train, {},
                                       w.grammar.slots(), w.grammar.vocab_size());
    LogitTable table = logits_from_model(teacher.model, w.train);
    table.erase(w.train[3].id);
    DistillConfig cfg = w.tiny_distill_cfg();
    cfg.gamma_mode = GammaMode::Teacher;
    CHECK_THROWS_WITH_AS(distill(cfg, w.train, w.test, &table, nullptr),
                         doctest::Contains("missing logits"), std::invalid_argument);
}

TEST_CASE("distill: hybrid requires both sources") {
    SmallWorld& w = world();
    TeacherRun teacher = train_teacher(w.tiny_teacher_cfg(HeadKind::ClsPooled), w.train, {},
                                       w.grammar.slots(), w.grammar.vocab_size());
    LogitTable table = logits_from_model(teacher.model, w.train);
    DistillConfig cfg = w.tiny_distill_cfg();
    cfg.gamma_mode = GammaMode::Hybrid;
    CHECK_THROWS_AS(distill(cfg, w.train, w.test, &table, nullptr), std::invalid_argument);
    CHECK_THROWS_AS(distill(cfg, w.train, w.test, nullptr, nullptr), std::invalid_argument);
}

TEST_CASE("teacher logits stay constant through distillation") {
    SmallWorld& w = world();
    TeacherRun teacher = train_teacher(w.tiny_teacher_cfg(HeadKind::ClsPooled), w.train, {},
                                       w.grammar.slots(), w.grammar.vocab_size());
    std::vector<double> params_before = flat_params(teacher.model);
    LogitTable table = logits_from_model(teacher.model, w.train);
    LogitTable table_before = table;

    DistillConfig cfg = w.tiny_distill_cfg();
    cfg.gamma_mode = GammaMode::Teacher;
    cfg.schedule = Schedule::fixed(0.5);
    distill(cfg, w.train, w.test, &table, nullptr);

    CHECK(flat_params(teacher.model) == params_before);
    REQUIRE(table.size() == table_before.size());
    for (const auto& [id, s] : table_before) {
        CHECK(table.at(id).action == s.action);
        CHECK(table.at(id).object == s.object);
        CHECK(table.at(id).location == s.location);
    }
}

TEST_CASE("logged alpha/beta match the schedule recomputed from the logged errors") {
    SmallWorld& w = world();
    TeacherRun teacher = train_teacher(w.tiny_teacher_cfg(HeadKind::ClsPooled), w.train, {},
                                       w.grammar.slots(), w.grammar.vocab_size());
    LogitTable table = logits_from_model(teacher.model, w.train);

    DistillConfig cfg = w.tiny_distill_cfg();
    cfg.gamma_mode = GammaMode::Teacher;
    cfg.schedule = Schedule::exp();
    cfg.epochs = 4;
    DistillRun exp_run = distill(cfg, w.train, w.test, &table, nullptr);
    REQUIRE(exp_run.result.loss_trace.size() == 4);
    for (const EpochLog& log : exp_run.result.loss_trace) {
        CHECK(log.beta == schedule_beta(cfg.schedule, log.epoch, 0.0));
        CHECK(log.alpha == schedule_alpha(log.beta));
    }

    cfg.schedule = Schedule::err();
    DistillRun err_run = distill(cfg, w.train, w.test, &table, nullptr);
    for (const EpochLog& log : err_run.result.loss_trace) {
        // per-batch beta = batch error, so the example-weighted means coincide
        CHECK(log.beta == doctest::Approx(log.batch_err).epsilon(1e-9));
        CHECK(log.alpha == doctest::Approx(1.0 - log.batch_err).epsilon(1e-9));
    }
}

TEST_CASE("pipeline baseline at rate zero equals the clean evaluation") {
    SmallWorld& w = world();
    TeacherRun teacher = train_teacher(w.tiny_teacher_cfg(HeadKind::ClsPooled), w.train, w.test,
                                       w.grammar.slots(), w.grammar.vocab_size());
    ErrorRates clean = evaluate_encoder(teacher.model, w.test);
    ErrorRates piped = pipeline_baseline(teacher.model, w.test, w.channel, 0.0, 7);
    CHECK(clean.full == piped.full);
    CHECK(clean.action == piped.action);
}

TEST_CASE("grid: rows, resume, aggregates, reproducibility") {
    SmallWorld& w = world();
    // noise-free frames so the tiny runs converge quickly
    NoiseChannel clean = NoiseChannel::identity(w.grammar.vocab_size());
    Dataset train = render_frames(w.train, clean, 301);
    Dataset test = render_frames(w.test, clean, 302);
    TeacherRun teacher = train_teacher(w.tiny_teacher_cfg(HeadKind::ClsPooled), train, {},
                                       w.grammar.slots(), w.grammar.vocab_size());
    LogitTable table = logits_from_model(teacher.model, train);

    GridConfig grid;
    DistillConfig kd = w.tiny_distill_cfg();
    kd.epochs = 25;
    kd.lr = 0.01;
    kd.gamma_mode = GammaMode::Teacher;
    kd.schedule = Schedule::exp();
    DistillConfig base = kd;
    base.gamma_mode = GammaMode::None;
    grid.cells = {{"kd", kd}, {"baseline", base}};
    grid.seeds = {11, 12};

    const std::string csv = "grid_rows_test.csv";
    const std::string agg = "grid_agg_test.csv";
    std::remove(csv.c_str());
    std::remove(agg.c_str());

    auto rows = run_grid(grid, train, test, &table, nullptr, csv, agg);
    CHECK(rows.size() == 4);
    for (const auto& r : rows) CHECK(r.converged);

    // aggregate mean matches the hand-computed mean of the per-seed rows
    std::map<std::string, std::pair<double, int>> mean_by_hash;
    for (const auto& r : rows) {
        if (!r.converged) continue;
        mean_by_hash[r.config_hash].first += r.test_err;
        mean_by_hash[r.config_hash].second += 1;
    }
    std::ifstream agg_in(agg);
    std::string line;
    std::getline(agg_in, line);  // header
    int agg_rows = 0;
    while (std::getline(agg_in, line)) {
        if (line.empty()) continue;
        ++agg_rows;
        std::stringstream ss(line);
        std::vector<std::string> cells;
        std::string cell;
        while (std::getline(ss, cell, ',')) cells.push_back(cell);
        REQUIRE(cells.size() == 9);
        const auto& [sum, n] = mean_by_hash.at(cells[0]);
        CHECK(std::stod(cells[5]) == doctest::Approx(sum / n).epsilon(1e-12));
        CHECK(std::stoi(cells[7]) == 2);  // n
    }
    CHECK(agg_rows == 2);

    // resume: drop one row, re-run, and only that cell is recomputed
    std::vector<std::string> lines;
    {
        std::ifstream in(csv);
        while (std::getline(in, line)) lines.push_back(line);
    }
    REQUIRE(lines.size() == 5);  // header + 4 rows
    const std::string dropped = lines.back();
    {
        std::ofstream out(csv);
        for (size_t i = 0; i + 1 < lines.size(); ++i) out << lines[i] << "\n";
    }
    auto rows2 = run_grid(grid, train, test, &table, nullptr, csv, agg);
    CHECK(rows2.size() == 4);

    // the re-run row reproduces the dropped row's error rate to full precision
    std::vector<std::string> lines2;
    {
        std::ifstream in(csv);
        while (std::getline(in, line)) lines2.push_back(line);
    }
    REQUIRE(lines2.size() == 5);
    auto split_csv = [](const std::string& s) {
        std::vector<std::string> cells;
        std::stringstream ss(s);
        std::string cell;
        while (std::getline(ss, cell, ',')) cells.push_back(cell);
        return cells;
    };
    auto before = split_csv(dropped);
    auto after = split_csv(lines2.back());
    CHECK(before[0] == after[0]);  // hash
    CHECK(before[1] == after[1]);  // seed
    CHECK(std::stod(before[6]) == std::stod(after[6]));  // test_err, full precision
    CHECK(before[7] == after[7]);

    std::remove(csv.c_str());
    std::remove(agg.c_str());
}
