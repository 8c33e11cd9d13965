// Command-line front end: corpus generation/rendering, teacher fine-tuning,
// logit export, student distillation, evaluation, pipeline baseline, and the
// experiment grid runner. All hard errors exit nonzero.

#include <CLI11.hpp>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <optional>

#include "slukd/checkpoint.hpp"
#include "slukd/corpus.hpp"
#include "slukd/harness.hpp"

using namespace slukd;
using namespace slukd::corpus;
using namespace slukd::harness;
using nlohmann::json;

namespace {

Grammar load_grammar(const std::string& config_path) {
    if (config_path.empty()) return Grammar::build(Grammar::default_config());
    return Grammar::build(grammar_config_from_json_file(config_path));
}

NoiseChannel load_channel(const std::string& config_path, int vocab_size) {
    if (config_path.empty()) return NoiseChannel::default_for(vocab_size);
    return channel_from_json_file(config_path, vocab_size);
}

json rates_to_json(const ErrorRates& r) {
    return {{"full", r.full},
            {"action", r.action},
            {"object", r.object},
            {"location", r.location},
            {"count", r.count}};
}

json result_to_json(const RunResult& r) {
    json traces = json::array();
    for (const EpochLog& e : r.loss_trace)
        traces.push_back({{"epoch", e.epoch},
                          {"l_ce", e.l_ce},
                          {"l_kd", e.l_kd},
                          {"alpha", e.alpha},
                          {"beta", e.beta},
                          {"total", e.total},
                          {"batch_err", e.batch_err}});
    return {{"test", rates_to_json(r.test)},
            {"train_error_trace", r.train_error_trace},
            {"loss_trace", traces},
            {"converged", r.converged},
            {"wall_seconds", r.wall_seconds},
            {"config", json::parse(r.config_echo.empty() ? "{}" : r.config_echo)}};
}

void write_json(const json& doc, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << doc.dump(2) << "\n";
}

void write_trace_csv(const RunResult& r, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << "epoch,l_ce,l_kd,alpha,beta,total,batch_err,train_err\n";
    out.precision(17);
    for (size_t i = 0; i < r.loss_trace.size(); ++i) {
        const EpochLog& e = r.loss_trace[i];
        out << e.epoch << ',' << e.l_ce << ',' << e.l_kd << ',' << e.alpha << ',' << e.beta << ','
            << e.total << ',' << e.batch_err << ',' << r.train_error_trace[i] << "\n";
    }
}

std::string split_stem(const std::string& out) {
    const std::string suffix = ".jsonl";
    if (out.size() > suffix.size() && out.ends_with(suffix))
        return out.substr(0, out.size() - suffix.size());
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"cross-modal slot-filling distillation workbench"};
    app.require_subcommand(1);

    std::string grammar_config;
    app.add_option("--grammar-config", grammar_config,
                   "grammar JSON (defaults to the built-in grammar)");

    // ---------------- corpus ----------------
    auto* corpus_cmd = app.add_subcommand("corpus", "synthetic corpus tools");
    corpus_cmd->require_subcommand(1);

    auto* gen = corpus_cmd->add_subcommand("generate", "sample labelled command scripts");
    int gen_n = 5000;
    uint64_t gen_seed = 1;
    std::string gen_out = "dataset.jsonl";
    std::string gen_split;
    uint64_t gen_split_seed = 1;
    gen->add_option("--n", gen_n, "example count")->check(CLI::PositiveNumber);
    gen->add_option("--seed", gen_seed, "generation seed");
    gen->add_option("--out", gen_out, "output JSONL path")->required();
    gen->add_option("--split", gen_split, "train,valid,test fractions, e.g. 0.7,0.1,0.2");
    gen->add_option("--split-seed", gen_split_seed, "split shuffle seed");

    auto* render = corpus_cmd->add_subcommand("render", "render posterior frames");
    std::string render_in, render_out, render_channel;
    uint64_t render_seed = 1;
    render->add_option("--in", render_in, "input dataset JSONL")->required();
    render->add_option("--out", render_out, "output JSONL path")->required();
    render->add_option("--channel-config", render_channel, "noise channel JSON");
    render->add_option("--seed", render_seed, "render seed");

    // ---------------- teacher ----------------
    auto* teacher_cmd = app.add_subcommand("teacher", "text model fine-tuning");
    teacher_cmd->require_subcommand(1);

    auto* ttrain = teacher_cmd->add_subcommand("train", "fine-tune a teacher or professor");
    TeacherTrainConfig tcfg;
    std::string t_variant = "teacher";
    std::string t_train, t_test, t_out, t_result;
    ttrain->add_option("--variant", t_variant, "teacher | professor")
        ->check(CLI::IsMember({"teacher", "professor"}));
    ttrain->add_option("--train", t_train, "training dataset JSONL")->required();
    ttrain->add_option("--test", t_test, "test dataset JSONL");
    ttrain->add_option("--out", t_out, "model checkpoint path")->required();
    ttrain->add_option("--result", t_result, "run result JSON path");
    ttrain->add_option("--epochs", tcfg.epochs);
    ttrain->add_option("--batch", tcfg.batch_size);
    ttrain->add_option("--lr", tcfg.lr);
    ttrain->add_option("--seed", tcfg.seed);
    ttrain->add_option("--d-model", tcfg.d_model);
    ttrain->add_option("--layers", tcfg.n_layers);
    ttrain->add_option("--heads", tcfg.n_heads);
    ttrain->add_option("--ff-dim", tcfg.ff_dim);

    auto* texport = teacher_cmd->add_subcommand("export-logits", "write per-example logits");
    std::string e_model, e_data, e_out;
    texport->add_option("--model", e_model, "model checkpoint")->required();
    texport->add_option("--data", e_data, "dataset JSONL")->required();
    texport->add_option("--out", e_out, "logit JSONL path")->required();

    // ---------------- distill ----------------
    auto* distill_cmd = app.add_subcommand("distill", "student training");
    auto* drun = distill_cmd->add_subcommand("run", "train a student under distillation");
    std::string d_train, d_test, d_teacher, d_professor, d_out, d_result, d_trace;
    std::string d_distance = "mae", d_gamma = "teacher", d_schedule = "fixed:0.1";
    DistillConfig dcfg;
    drun->add_option("--train", d_train, "rendered training dataset")->required();
    drun->add_option("--test", d_test, "rendered test dataset")->required();
    drun->add_option("--teacher-logits", d_teacher, "teacher logit JSONL");
    drun->add_option("--professor-logits", d_professor, "professor logit JSONL");
    drun->add_option("--distance", d_distance, "mse | mae")
        ->check(CLI::IsMember({"mse", "mae"}));
    drun->add_option("--gamma-mode", d_gamma, "teacher | professor | hybrid | none")
        ->check(CLI::IsMember({"teacher", "professor", "hybrid", "none"}));
    drun->add_option("--schedule", d_schedule, "fixed:<beta> | err | exp | tri");
    drun->add_option("--epochs", dcfg.epochs);
    drun->add_option("--batch", dcfg.batch_size);
    drun->add_option("--lr", dcfg.lr);
    drun->add_option("--seed", dcfg.seed);
    drun->add_option("--fraction", dcfg.data_fraction, "speech-text pair budget (0,1]");
    drun->add_option("--hidden", dcfg.hidden);
    drun->add_option("--out", d_out, "student checkpoint path");
    drun->add_option("--result", d_result, "run result JSON path");
    drun->add_option("--trace", d_trace, "per-epoch trace CSV path");

    // ---------------- eval ----------------
    auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
    std::string v_model, v_data;
    eval_cmd->add_option("--model", v_model, "model checkpoint")->required();
    eval_cmd->add_option("--data", v_data, "dataset JSONL")->required();

    // ---------------- grid ----------------
    auto* grid_cmd = app.add_subcommand("grid", "experiment grids");
    auto* grun = grid_cmd->add_subcommand("run", "run every (cell, seed) pair");
    std::string g_config, g_out = "results.csv", g_agg = "aggregate.csv";
    int g_jobs = 0;
    grun->add_option("--config", g_config, "grid JSON")->required();
    grun->add_option("--out", g_out, "per-run CSV (appended, resumable)");
    grun->add_option("--aggregate", g_agg, "aggregate CSV (rewritten)");
    grun->add_option("--jobs", g_jobs, "worker threads (overrides config)");

    // ---------------- baseline ----------------
    auto* baseline_cmd = app.add_subcommand("baseline", "reference systems");
    auto* pipe = baseline_cmd->add_subcommand("pipeline", "text model on corrupted scripts");
    std::string p_model, p_data, p_channel;
    double p_rate = 0.1;
    uint64_t p_seed = 1;
    pipe->add_option("--model", p_model, "teacher/professor checkpoint")->required();
    pipe->add_option("--data", p_data, "dataset JSONL")->required();
    pipe->add_option("--rate", p_rate, "token corruption rate in [0,1]");
    pipe->add_option("--seed", p_seed, "corruption seed");
    pipe->add_option("--channel-config", p_channel, "noise channel JSON");

    CLI11_PARSE(app, argc, argv);

    try {
        Grammar grammar = load_grammar(grammar_config);

        if (gen->parsed()) {
            Dataset data = generate(grammar, gen_n, gen_seed);
            if (gen_split.empty()) {
                write_dataset(gen_out, data, grammar);
                std::cout << "wrote " << data.size() << " examples to " << gen_out << "\n";
            } else {
                double f[3];
                if (std::sscanf(gen_split.c_str(), "%lf,%lf,%lf", &f[0], &f[1], &f[2]) != 3)
                    throw std::invalid_argument("--split expects three comma-separated fractions");
                Split s = split(data, f[0], f[1], f[2], gen_split_seed);
                const std::string stem = split_stem(gen_out);
                write_dataset(stem + ".train.jsonl", s.train, grammar);
                write_dataset(stem + ".valid.jsonl", s.valid, grammar);
                write_dataset(stem + ".test.jsonl", s.test, grammar);
                std::cout << "wrote " << s.train.size() << "/" << s.valid.size() << "/"
                          << s.test.size() << " examples to " << stem << ".{train,valid,test}"
                          << ".jsonl\n";
            }
        } else if (render->parsed()) {
            Dataset data = read_dataset(render_in, grammar);
            NoiseChannel channel = load_channel(render_channel, grammar.vocab_size());
            Dataset rendered = render_frames(data, channel, render_seed);
            write_dataset(render_out, rendered, grammar);
            std::cout << "rendered " << rendered.size() << " examples to " << render_out << "\n";
        } else if (ttrain->parsed()) {
            tcfg.variant = t_variant == "teacher" ? HeadKind::ClsPooled : HeadKind::MaxPooled;
            Dataset train = read_dataset(t_train, grammar);
            Dataset test = t_test.empty() ? Dataset{} : read_dataset(t_test, grammar);
            TeacherRun run = train_teacher(tcfg, train, test, grammar.slots(),
                                           grammar.vocab_size());
            save_encoder(run.model, tcfg.seed, t_out);
            if (!t_result.empty()) write_json(result_to_json(run.result), t_result);
            std::cout << t_variant << " final train error "
                      << (run.result.train_error_trace.empty()
                              ? 1.0
                              : run.result.train_error_trace.back())
                      << ", test error " << run.result.test.full << ", converged "
                      << run.result.converged << "\n";
        } else if (texport->parsed()) {
            TextEncoderModel model = load_encoder(e_model);
            Dataset data = read_dataset(e_data, grammar);
            export_logits(model, data, e_out);
            std::cout << "wrote logits for " << data.size() << " examples to " << e_out << "\n";
        } else if (drun->parsed()) {
            dcfg.distance = distance_from_name(d_distance);
            dcfg.gamma_mode = gamma_mode_from_name(d_gamma);
            dcfg.schedule = Schedule::parse(d_schedule, dcfg.epochs);
            dcfg.slots = grammar.slots();
            Dataset train = read_dataset(d_train, grammar);
            Dataset test = read_dataset(d_test, grammar);
            std::optional<LogitTable> teacher, professor;
            if (!d_teacher.empty()) teacher = read_logits(d_teacher, grammar.slots());
            if (!d_professor.empty()) professor = read_logits(d_professor, grammar.slots());
            DistillRun run = distill(dcfg, train, test, teacher ? &*teacher : nullptr,
                                     professor ? &*professor : nullptr);
            if (!d_out.empty()) save_student(run.model, dcfg.seed, d_out);
            if (!d_result.empty()) write_json(result_to_json(run.result), d_result);
            if (!d_trace.empty()) write_trace_csv(run.result, d_trace);
            std::cout << "test error " << run.result.test.full << ", converged "
                      << run.result.converged << ", wall " << run.result.wall_seconds << "s\n";
        } else if (eval_cmd->parsed()) {
            Dataset data = read_dataset(v_data, grammar);
            ErrorRates rates;
            if (checkpoint_kind(v_model) == "student") {
                StudentModel model = load_student(v_model);
                rates = evaluate_student(model, data);
            } else {
                TextEncoderModel model = load_encoder(v_model);
                rates = evaluate_encoder(model, data);
            }
            std::cout << rates_to_json(rates).dump(2) << "\n";
        } else if (grun->parsed()) {
            std::ifstream in(g_config);
            if (!in) throw std::runtime_error("cannot open " + g_config);
            json doc;
            in >> doc;

            Dataset train = read_dataset(doc.at("train").get<std::string>(), grammar);
            Dataset test = read_dataset(doc.at("test").get<std::string>(), grammar);
            std::optional<LogitTable> teacher, professor;
            if (doc.contains("teacher_logits"))
                teacher = read_logits(doc.at("teacher_logits").get<std::string>(),
                                      grammar.slots());
            if (doc.contains("professor_logits"))
                professor = read_logits(doc.at("professor_logits").get<std::string>(),
                                        grammar.slots());

            DistillConfig defaults;
            defaults.slots = grammar.slots();
            defaults.epochs = doc.value("epochs", defaults.epochs);
            defaults.batch_size = doc.value("batch_size", defaults.batch_size);
            defaults.lr = doc.value("lr", defaults.lr);
            defaults.hidden = doc.value("hidden", defaults.hidden);

            GridConfig grid;
            grid.seeds = doc.at("seeds").get<std::vector<uint64_t>>();
            grid.jobs = g_jobs > 0 ? g_jobs : doc.value("jobs", 1);
            for (const json& c : doc.at("cells")) {
                GridCell cell;
                cell.name = c.value("name", "");
                cell.config = defaults;
                cell.config.gamma_mode = gamma_mode_from_name(c.at("gamma_mode").get<std::string>());
                if (c.contains("distance"))
                    cell.config.distance = distance_from_name(c.at("distance").get<std::string>());
                cell.config.epochs = c.value("epochs", cell.config.epochs);
                cell.config.batch_size = c.value("batch_size", cell.config.batch_size);
                cell.config.lr = c.value("lr", cell.config.lr);
                cell.config.hidden = c.value("hidden", cell.config.hidden);
                cell.config.data_fraction = c.value("fraction", 1.0);
                cell.config.schedule =
                    Schedule::parse(c.value("schedule", "fixed:0.1"), cell.config.epochs);
                grid.cells.push_back(std::move(cell));
            }
            auto rows = run_grid(grid, train, test, teacher ? &*teacher : nullptr,
                                 professor ? &*professor : nullptr, g_out, g_agg);
            std::cout << "grid complete: " << rows.size() << " rows in " << g_out << "\n";
        } else if (pipe->parsed()) {
            TextEncoderModel model = load_encoder(p_model);
            Dataset data = read_dataset(p_data, grammar);
            NoiseChannel channel = load_channel(p_channel, grammar.vocab_size());
            ErrorRates rates = pipeline_baseline(model, data, channel, p_rate, p_seed);
            std::cout << rates_to_json(rates).dump(2) << "\n";
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
