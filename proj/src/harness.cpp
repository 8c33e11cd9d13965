#include "slukd/harness.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <fstream>
#include <json.hpp>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "slukd/optim.hpp"

namespace slukd::harness {

using corpus::Dataset;
using corpus::Example;
using nlohmann::json;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
    return std::chrono::duration<double>(Clock::now() - start).count();
}

int argmax_row(const Tensor& t, int row) {
    int best = 0;
    for (int j = 1; j < t.cols(); ++j)
        if (t.at(row, j) > t.at(row, best)) best = j;
    return best;
}

std::vector<SlotLabel> batch_predictions(const ad::Graph& g, ad::NodeId action, ad::NodeId object,
                                         ad::NodeId location) {
    const Tensor& a = g.value(action);
    const Tensor& o = g.value(object);
    const Tensor& l = g.value(location);
    std::vector<SlotLabel> out(a.rows());
    for (int i = 0; i < a.rows(); ++i)
        out[i] = {argmax_row(a, i), argmax_row(o, i), argmax_row(l, i)};
    return out;
}

struct ErrorCounts {
    long long full = 0, action = 0, object = 0, location = 0, n = 0;

    void add(const SlotLabel& pred, const SlotLabel& truth) {
        if (pred.action != truth.action) ++action;
        if (pred.object != truth.object) ++object;
        if (pred.location != truth.location) ++location;
        if (!(pred == truth)) ++full;
        ++n;
    }
    ErrorRates rates() const {
        ErrorRates r;
        r.count = static_cast<int>(n);
        if (n == 0) return r;
        r.full = static_cast<double>(full) / n;
        r.action = static_cast<double>(action) / n;
        r.object = static_cast<double>(object) / n;
        r.location = static_cast<double>(location) / n;
        return r;
    }
};

constexpr int kEvalBatch = 64;

std::array<std::vector<int>, 3> slot_label_vectors(const std::vector<const Example*>& batch) {
    std::array<std::vector<int>, 3> labels;
    for (const Example* e : batch) {
        labels[0].push_back(e->label.action);
        labels[1].push_back(e->label.object);
        labels[2].push_back(e->label.location);
    }
    return labels;
}

}  // namespace

bool detect_nonconvergence(const std::vector<double>& train_error_trace, bool saw_non_finite) {
    if (saw_non_finite) return true;
    if (train_error_trace.empty()) return true;
    const double final_accuracy = 1.0 - train_error_trace.back();
    return final_accuracy < 0.5;
}

// ---------------------------------------------------------------------------
// Teacher training
// ---------------------------------------------------------------------------

std::string TeacherTrainConfig::to_json() const {
    json j = {{"variant", variant == HeadKind::ClsPooled ? "teacher" : "professor"},
              {"epochs", epochs},
              {"batch_size", batch_size},
              {"lr", lr},
              {"seed", seed},
              {"d_model", d_model},
              {"n_layers", n_layers},
              {"n_heads", n_heads},
              {"ff_dim", ff_dim}};
    return j.dump();
}

TeacherRun train_teacher(const TeacherTrainConfig& cfg, const Dataset& train, const Dataset& test,
                         SlotSpaces slots, int vocab_size) {
    if (train.empty()) throw std::invalid_argument("train_teacher: empty training set");
    if (cfg.epochs < 0 || cfg.batch_size < 1)
        throw std::invalid_argument("train_teacher: bad epochs/batch size");
    const auto start = Clock::now();

    TeacherRun run{TextEncoderModel::init(cfg.variant, vocab_size, slots, cfg.seed, cfg.d_model,
                                          cfg.n_layers, cfg.n_heads, cfg.ff_dim),
                   {}};
    run.result.config_echo = cfg.to_json();

    Rng shuffle_rng = Rng(cfg.seed).child(0x74656163686572ULL);
    Adam adam({cfg.lr});
    std::vector<size_t> order(train.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        shuffle_rng.shuffle(order);
        ErrorCounts epoch_errors;
        double ce_weighted = 0.0;
        for (size_t at = 0; at < order.size(); at += cfg.batch_size) {
            std::vector<const Example*> batch;
            std::vector<const TokenSeq*> tokens;
            for (size_t i = at; i < std::min(order.size(), at + cfg.batch_size); ++i) {
                batch.push_back(&train[order[i]]);
                tokens.push_back(&train[order[i]].tokens);
            }
            ad::Graph g(static_cast<size_t>(batch.size()) * 128);
            EncoderBatchGraph fwd = encoder_forward_batch(g, run.model, tokens);
            ad::NodeId loss =
                ce_loss_node(g, {fwd.action, fwd.object, fwd.location}, slot_label_vectors(batch));
            const double loss_value = g.value(loss).data[0];
            if (!std::isfinite(loss_value))
                throw std::runtime_error("train_teacher: non-finite loss at epoch " +
                                         std::to_string(epoch));
            auto preds = batch_predictions(g, fwd.action, fwd.object, fwd.location);
            for (size_t i = 0; i < batch.size(); ++i) epoch_errors.add(preds[i], batch[i]->label);
            ce_weighted += loss_value * static_cast<double>(batch.size());
            g.backward(loss);
            adam.step(fwd.params, g);
        }
        const double train_err = epoch_errors.rates().full;
        const double ce_mean = ce_weighted / static_cast<double>(train.size());
        run.result.train_error_trace.push_back(train_err);
        run.result.loss_trace.push_back({epoch, ce_mean, 0.0, 1.0, 0.0, ce_mean, train_err});
    }

    if (!test.empty()) run.result.test = evaluate_encoder(run.model, test);
    run.result.converged =
        !detect_nonconvergence(run.result.train_error_trace, /*saw_non_finite=*/false);
    run.result.wall_seconds = seconds_since(start);
    return run;
}

// ---------------------------------------------------------------------------
// Logit tables
// ---------------------------------------------------------------------------

LogitTable logits_from_model(TextEncoderModel& model, const Dataset& data) {
    LogitTable out;
    for (size_t at = 0; at < data.size(); at += kEvalBatch) {
        std::vector<const TokenSeq*> tokens;
        for (size_t i = at; i < std::min(data.size(), at + kEvalBatch); ++i)
            tokens.push_back(&data[i].tokens);
        ad::Graph g(static_cast<size_t>(tokens.size()) * 128);
        EncoderBatchGraph fwd = encoder_forward_batch(g, model, tokens);
        const Tensor& a = g.value(fwd.action);
        const Tensor& o = g.value(fwd.object);
        const Tensor& l = g.value(fwd.location);
        for (size_t i = at; i < std::min(data.size(), at + kEvalBatch); ++i) {
            const int r = static_cast<int>(i - at);
            SlotLogits s;
            for (int j = 0; j < a.cols(); ++j) s.action.push_back(a.at(r, j));
            for (int j = 0; j < o.cols(); ++j) s.object.push_back(o.at(r, j));
            for (int j = 0; j < l.cols(); ++j) s.location.push_back(l.at(r, j));
            out[data[i].id] = std::move(s);
        }
    }
    return out;
}

void export_logits(TextEncoderModel& model, const Dataset& data, const std::string& path) {
    LogitTable table = logits_from_model(model, data);
    std::ofstream out(path);
    if (!out) throw std::runtime_error("export_logits: cannot write " + path);
    for (const Example& e : data) {
        const SlotLogits& s = table.at(e.id);
        json line = {{"id", e.id},
                     {"logits",
                      {{"action", s.action}, {"object", s.object}, {"location", s.location}}}};
        out << line.dump() << "\n";
    }
    if (!out) throw std::runtime_error("export_logits: write failed for " + path);
}

LogitTable read_logits(const std::string& path, SlotSpaces expected) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("read_logits: cannot open " + path);
    LogitTable out;
    std::string line;
    size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        json doc = json::parse(line);
        SlotLogits s;
        s.action = doc.at("logits").at("action").get<std::vector<double>>();
        s.object = doc.at("logits").at("object").get<std::vector<double>>();
        s.location = doc.at("logits").at("location").get<std::vector<double>>();
        if (static_cast<int>(s.action.size()) != expected.actions ||
            static_cast<int>(s.object.size()) != expected.objects ||
            static_cast<int>(s.location.size()) != expected.locations)
            throw std::runtime_error("read_logits: slot lengths at line " +
                                     std::to_string(line_no) + " do not match the label spaces");
        out[doc.at("id").get<int>()] = std::move(s);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Distillation
// ---------------------------------------------------------------------------

const char* gamma_mode_name(GammaMode m) {
    switch (m) {
        case GammaMode::Teacher: return "teacher";
        case GammaMode::Professor: return "professor";
        case GammaMode::Hybrid: return "hybrid";
        case GammaMode::None: return "none";
    }
    return "?";
}

GammaMode gamma_mode_from_name(const std::string& name) {
    if (name == "teacher") return GammaMode::Teacher;
    if (name == "professor") return GammaMode::Professor;
    if (name == "hybrid") return GammaMode::Hybrid;
    if (name == "none" || name == "baseline") return GammaMode::None;
    throw std::invalid_argument("unknown gamma mode: " + name);
}

std::string DistillConfig::to_json() const {
    json j = {{"distance", distance_name(distance)},
              {"gamma_mode", gamma_mode_name(gamma_mode)},
              {"schedule", schedule.name()},
              {"epochs", epochs},
              {"batch_size", batch_size},
              {"lr", lr},
              {"seed", seed},
              {"data_fraction", data_fraction},
              {"hidden", hidden}};
    return j.dump();
}

std::string DistillConfig::cell_key() const {
    std::ostringstream key;
    key << distance_name(distance) << '|' << gamma_mode_name(gamma_mode) << '|'
        << schedule.name() << '|' << data_fraction << '|' << epochs << '|' << batch_size << '|'
        << lr << '|' << hidden;
    return key.str();
}

std::string config_hash(const DistillConfig& cfg) {
    const std::string key = cfg.cell_key();
    uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : key) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    std::ostringstream out;
    out << std::hex << h;
    return out.str();
}

DistillRun distill(const DistillConfig& cfg, const Dataset& train_full, const Dataset& test,
                   const LogitTable* teacher, const LogitTable* professor) {
    if (cfg.epochs < 0 || cfg.batch_size < 1)
        throw std::invalid_argument("distill: bad epochs/batch size");
    const bool needs_teacher =
        cfg.gamma_mode == GammaMode::Teacher || cfg.gamma_mode == GammaMode::Hybrid;
    const bool needs_professor =
        cfg.gamma_mode == GammaMode::Professor || cfg.gamma_mode == GammaMode::Hybrid;
    if (needs_teacher && !teacher)
        throw std::invalid_argument("distill: teacher logits required for gamma mode " +
                                    std::string(gamma_mode_name(cfg.gamma_mode)));
    if (needs_professor && !professor)
        throw std::invalid_argument("distill: professor logits required for gamma mode " +
                                    std::string(gamma_mode_name(cfg.gamma_mode)));

    const auto start = Clock::now();
    const Dataset train = cfg.data_fraction < 1.0
                              ? corpus::subsample(train_full, cfg.data_fraction, cfg.seed)
                              : train_full;
    if (train.empty()) throw std::invalid_argument("distill: empty training set");
    int input_dim = -1;
    for (const Example& e : train) {
        if (e.frames.empty())
            throw std::invalid_argument("distill: training example " + std::to_string(e.id) +
                                        " has no rendered frames");
        if (input_dim < 0) input_dim = static_cast<int>(e.frames[0].size());
        for (const LogitTable* table : {needs_teacher ? teacher : nullptr,
                                        needs_professor ? professor : nullptr}) {
            if (table && !table->count(e.id))
                throw std::invalid_argument("distill: missing logits for example id " +
                                            std::to_string(e.id));
        }
    }

    const SlotSpaces slots = cfg.slots;
    if (slots.total() < 3) throw std::invalid_argument("distill: config slot spaces unset");
    for (const LogitTable* table : {teacher, professor}) {
        if (!table || table->empty()) continue;
        const SlotLogits& s = table->begin()->second;
        if (static_cast<int>(s.action.size()) != slots.actions ||
            static_cast<int>(s.object.size()) != slots.objects ||
            static_cast<int>(s.location.size()) != slots.locations)
            throw std::invalid_argument("distill: logit table does not match the slot spaces");
    }

    DistillRun run{StudentModel::init(input_dim, cfg.hidden, slots, cfg.seed), {}};
    run.result.config_echo = cfg.to_json();

    Rng shuffle_rng = Rng(cfg.seed).child(0x73747564656e74ULL);
    Adam adam({cfg.lr});
    std::vector<size_t> order(train.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;

    const int total = slots.total();
    bool stopped = false;
    for (int epoch = 1; epoch <= cfg.epochs && !stopped; ++epoch) {
        shuffle_rng.shuffle(order);
        // Exp/Tri/Fixed hold beta constant across the epoch; Err is per batch
        const bool err_schedule = cfg.schedule.kind == Schedule::Kind::Err;
        const double epoch_beta =
            err_schedule ? 0.0 : schedule_beta(cfg.schedule, epoch, 0.0);

        ErrorCounts epoch_errors;
        double ce_weighted = 0.0, kd_weighted = 0.0, total_weighted = 0.0;
        double alpha_weighted = 0.0, beta_weighted = 0.0;

        for (size_t at = 0; at < order.size() && !stopped; at += cfg.batch_size) {
            std::vector<const Example*> batch;
            std::vector<const FrameSeq*> frames;
            for (size_t i = at; i < std::min(order.size(), at + cfg.batch_size); ++i) {
                batch.push_back(&train[order[i]]);
                frames.push_back(&train[order[i]].frames);
            }
            const int b = static_cast<int>(batch.size());

            ad::Graph g(static_cast<size_t>(b) * 64 + 512);
            StudentBatchGraph fwd = student_forward_batch(g, run.model, frames);

            // pre-update batch error drives Err scheduling and hybrid gamma
            auto preds = batch_predictions(g, fwd.action, fwd.object, fwd.location);
            ErrorCounts batch_counts;
            for (int i = 0; i < b; ++i) batch_counts.add(preds[i], batch[i]->label);
            const double batch_err = batch_counts.rates().full;
            for (int i = 0; i < b; ++i) epoch_errors.add(preds[i], batch[i]->label);

            const bool no_kd = cfg.gamma_mode == GammaMode::None;
            const double beta =
                no_kd ? 0.0
                      : (err_schedule ? schedule_beta(cfg.schedule, epoch, batch_err) : epoch_beta);
            const double alpha = schedule_alpha(beta);

            ad::NodeId ce =
                ce_loss_node(g, {fwd.action, fwd.object, fwd.location}, slot_label_vectors(batch));
            double kd_value = 0.0;
            ad::NodeId loss;
            if (cfg.gamma_mode == GammaMode::None) {
                loss = ce;
            } else {
                double gamma = 0.0;
                if (cfg.gamma_mode == GammaMode::Professor) gamma = 1.0;
                if (cfg.gamma_mode == GammaMode::Hybrid) gamma = batch_err;
                auto constant_rows = [&](const LogitTable& table) {
                    Tensor rows(b, total);
                    for (int i = 0; i < b; ++i) {
                        const std::vector<double> flat = concat_logits(table.at(batch[i]->id));
                        for (int j = 0; j < total; ++j) rows.at(i, j) = flat[j];
                    }
                    return g.constant(std::move(rows));
                };
                ad::NodeId slu = g.concat_cols({fwd.action, fwd.object, fwd.location});
                std::optional<ad::NodeId> t_node, p_node;
                if (needs_teacher) t_node = constant_rows(*teacher);
                if (needs_professor) p_node = constant_rows(*professor);
                ad::NodeId kd = kd_loss_node(g, cfg.distance, slu, t_node, p_node, gamma);
                kd_value = g.value(kd).data[0];
                loss = total_loss_node(g, ce, kd, alpha, beta);
            }

            const double ce_value = g.value(ce).data[0];
            const double loss_value = g.value(loss).data[0];
            if (!std::isfinite(loss_value)) {
                run.result.saw_non_finite = true;
                stopped = true;
                break;
            }

            g.backward(loss);
            adam.step(fwd.params, g);

            ce_weighted += ce_value * b;
            kd_weighted += kd_value * b;
            total_weighted += loss_value * b;
            alpha_weighted += alpha * b;
            beta_weighted += beta * b;
        }

        if (stopped) break;
        const double n = static_cast<double>(train.size());
        const double train_err = epoch_errors.rates().full;
        // constant-per-epoch schedules log their exact values; Err logs the
        // example-weighted mean of the per-batch betas
        const bool no_kd = cfg.gamma_mode == GammaMode::None;
        const double logged_beta = no_kd ? 0.0
                                   : err_schedule ? beta_weighted / n
                                                  : epoch_beta;
        run.result.train_error_trace.push_back(train_err);
        run.result.loss_trace.push_back({epoch, ce_weighted / n, kd_weighted / n,
                                         err_schedule && !no_kd ? alpha_weighted / n
                                                                : schedule_alpha(logged_beta),
                                         logged_beta, total_weighted / n, train_err});
    }

    if (!test.empty()) run.result.test = evaluate_student(run.model, test);
    run.result.converged =
        !detect_nonconvergence(run.result.train_error_trace, run.result.saw_non_finite);
    run.result.wall_seconds = seconds_since(start);
    return run;
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

ErrorRates score_predictions(const std::vector<SlotLabel>& preds, const Dataset& data) {
    if (preds.size() != data.size())
        throw std::invalid_argument("score: prediction count does not match the dataset");
    ErrorCounts counts;
    for (size_t i = 0; i < data.size(); ++i) counts.add(preds[i], data[i].label);
    return counts.rates();
}

ErrorRates evaluate_student(StudentModel& model, const Dataset& data) {
    if (data.empty()) throw std::invalid_argument("evaluate: empty dataset");
    ErrorCounts counts;
    for (size_t at = 0; at < data.size(); at += kEvalBatch) {
        std::vector<const Example*> batch;
        std::vector<const FrameSeq*> frames;
        for (size_t i = at; i < std::min(data.size(), at + kEvalBatch); ++i) {
            if (data[i].frames.empty())
                throw std::invalid_argument("evaluate: example " + std::to_string(data[i].id) +
                                            " has no rendered frames");
            batch.push_back(&data[i]);
            frames.push_back(&data[i].frames);
        }
        ad::Graph g(static_cast<size_t>(batch.size()) * 64 + 256);
        StudentBatchGraph fwd = student_forward_batch(g, model, frames);
        auto preds = batch_predictions(g, fwd.action, fwd.object, fwd.location);
        for (size_t i = 0; i < batch.size(); ++i) counts.add(preds[i], batch[i]->label);
    }
    return counts.rates();
}

ErrorRates evaluate_encoder(TextEncoderModel& model, const Dataset& data) {
    if (data.empty()) throw std::invalid_argument("evaluate: empty dataset");
    ErrorCounts counts;
    for (size_t at = 0; at < data.size(); at += kEvalBatch) {
        std::vector<const Example*> batch;
        std::vector<const TokenSeq*> tokens;
        for (size_t i = at; i < std::min(data.size(), at + kEvalBatch); ++i) {
            batch.push_back(&data[i]);
            tokens.push_back(&data[i].tokens);
        }
        ad::Graph g(static_cast<size_t>(batch.size()) * 128);
        EncoderBatchGraph fwd = encoder_forward_batch(g, model, tokens);
        auto preds = batch_predictions(g, fwd.action, fwd.object, fwd.location);
        for (size_t i = 0; i < batch.size(); ++i) counts.add(preds[i], batch[i]->label);
    }
    return counts.rates();
}

ErrorRates pipeline_baseline(TextEncoderModel& model, const Dataset& data,
                             const corpus::NoiseChannel& channel, double rate, uint64_t seed) {
    Dataset corrupted = data;
    for (Example& e : corrupted) e.tokens = corpus::corrupt_tokens(e, channel, rate, seed);
    return evaluate_encoder(model, corrupted);
}

// ---------------------------------------------------------------------------
// Grid runner
// ---------------------------------------------------------------------------

namespace {

const char* kGridHeader = "config_hash,seed,distance,gamma_mode,schedule,fraction,test_err,converged,wall_s";

std::string row_to_csv(const GridRow& r) {
    std::ostringstream out;
    out.precision(17);
    out << r.config_hash << ',' << r.seed << ',' << r.distance << ',' << r.gamma_mode << ','
        << r.schedule << ',' << r.fraction << ',' << r.test_err << ','
        << (r.converged ? 1 : 0) << ',';
    out.precision(3);
    out << std::fixed << r.wall_s;
    return out.str();
}

std::vector<GridRow> read_rows(const std::string& path) {
    std::vector<GridRow> rows;
    std::ifstream in(path);
    if (!in) return rows;
    std::string line;
    bool first = true;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        if (first) {
            first = false;
            if (line == kGridHeader) continue;
            throw std::runtime_error("grid: unexpected header in " + path);
        }
        std::vector<std::string> cells;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) cells.push_back(cell);
        if (cells.size() != 9) throw std::runtime_error("grid: malformed row in " + path);
        GridRow r;
        r.config_hash = cells[0];
        r.seed = std::stoull(cells[1]);
        r.distance = cells[2];
        r.gamma_mode = cells[3];
        r.schedule = cells[4];
        r.fraction = std::stod(cells[5]);
        r.test_err = std::stod(cells[6]);
        r.converged = cells[7] == "1";
        r.wall_s = std::stod(cells[8]);
        rows.push_back(std::move(r));
    }
    return rows;
}

}  // namespace

std::vector<GridRow> run_grid(const GridConfig& grid, const Dataset& train, const Dataset& test,
                              const LogitTable* teacher, const LogitTable* professor,
                              const std::string& out_csv, const std::string& aggregate_csv) {
    if (grid.cells.empty() || grid.seeds.empty())
        throw std::invalid_argument("grid: need at least one cell and one seed");

    std::vector<GridRow> rows = read_rows(out_csv);
    std::set<std::pair<std::string, uint64_t>> done;
    for (const GridRow& r : rows) done.insert({r.config_hash, r.seed});

    struct Task {
        DistillConfig cfg;
        std::string hash;
    };
    std::vector<Task> tasks;
    for (const GridCell& cell : grid.cells) {
        for (uint64_t seed : grid.seeds) {
            DistillConfig cfg = cell.config;
            cfg.seed = seed;
            const std::string hash = config_hash(cfg);
            if (done.count({hash, seed})) continue;
            tasks.push_back({cfg, hash});
        }
    }

    const bool file_exists = std::ifstream(out_csv).good();
    std::ofstream out(out_csv, std::ios::app);
    if (!out) throw std::runtime_error("grid: cannot write " + out_csv);
    if (!file_exists) out << kGridHeader << "\n";
    out.flush();

    std::mutex mu;
    std::atomic<size_t> next{0};
    std::vector<std::string> errors;
    auto worker = [&]() {
        for (;;) {
            const size_t i = next.fetch_add(1);
            if (i >= tasks.size()) return;
            const Task& task = tasks[i];
            try {
                DistillRun run = distill(task.cfg, train, test, teacher, professor);
                GridRow r;
                r.config_hash = task.hash;
                r.seed = task.cfg.seed;
                r.distance = distance_name(task.cfg.distance);
                r.gamma_mode = gamma_mode_name(task.cfg.gamma_mode);
                r.schedule = task.cfg.schedule.name();
                r.fraction = task.cfg.data_fraction;
                r.test_err = run.result.test.full;
                r.converged = run.result.converged;
                r.wall_s = run.result.wall_seconds;
                std::lock_guard<std::mutex> lock(mu);
                rows.push_back(r);
                out << row_to_csv(r) << "\n";
                out.flush();
            } catch (const std::exception& e) {
                std::lock_guard<std::mutex> lock(mu);
                errors.push_back(e.what());
                return;
            }
        }
    };

    const int jobs = std::max(1, grid.jobs);
    if (jobs == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int j = 0; j < jobs; ++j) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
    }
    if (!errors.empty()) throw std::runtime_error("grid: run failed: " + errors.front());

    // aggregate per cell: mean/std over converged rows
    if (!aggregate_csv.empty()) {
        struct Agg {
            GridRow sample;
            std::vector<double> errs;
            int n = 0;
        };
        std::map<std::string, Agg> by_cell;
        for (const GridRow& r : rows) {
            Agg& a = by_cell[r.config_hash];
            a.sample = r;
            ++a.n;
            if (r.converged) a.errs.push_back(r.test_err);
        }
        std::ofstream agg(aggregate_csv);
        if (!agg) throw std::runtime_error("grid: cannot write " + aggregate_csv);
        agg << "config_hash,distance,gamma_mode,schedule,fraction,mean_test_err,std_test_err,n,"
               "converged\n";
        agg.precision(17);
        for (const auto& [hash, a] : by_cell) {
            double mean = 0.0, sd = 0.0;
            for (double e : a.errs) mean += e;
            if (!a.errs.empty()) mean /= static_cast<double>(a.errs.size());
            for (double e : a.errs) sd += (e - mean) * (e - mean);
            sd = a.errs.size() > 1 ? std::sqrt(sd / (static_cast<double>(a.errs.size()) - 1.0))
                                   : 0.0;
            agg << hash << ',' << a.sample.distance << ',' << a.sample.gamma_mode << ','
                << a.sample.schedule << ',' << a.sample.fraction << ',';
            if (a.errs.empty()) agg << "nan,nan";
            else agg << mean << ',' << sd;
            agg << ',' << a.n << ',' << a.errs.size() << "\n";
        }
    }
    return rows;
}

}  // namespace slukd::harness
