#include "slukd/checkpoint.hpp"

#include <fstream>
#include <json.hpp>
#include <stdexcept>

namespace slukd {

using nlohmann::json;

static json params_to_json(const std::function<void(const std::function<void(const std::string&, Tensor&)>&)>& visit) {
    json out = json::object();
    visit([&](const std::string& name, Tensor& t) {
        out[name] = {{"shape", {t.rows(), t.cols()}}, {"data", t.data}};
    });
    return out;
}

static void params_from_json(const json& src,
                             const std::function<void(const std::function<void(const std::string&, Tensor&)>&)>& visit) {
    visit([&](const std::string& name, Tensor& t) {
        if (!src.contains(name))
            throw std::runtime_error("checkpoint: missing parameter " + name);
        const json& p = src.at(name);
        const int r = p.at("shape").at(0).get<int>();
        const int c = p.at("shape").at(1).get<int>();
        if (r != t.rows() || c != t.cols())
            throw std::runtime_error("checkpoint: shape mismatch for " + name);
        t.data = p.at("data").get<std::vector<double>>();
        if (t.data.size() != static_cast<size_t>(r) * c)
            throw std::runtime_error("checkpoint: data length mismatch for " + name);
    });
}

static json load_doc(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("checkpoint: cannot open " + path);
    json doc;
    in >> doc;
    return doc;
}

static void write_doc(const json& doc, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("checkpoint: cannot write " + path);
    out << doc.dump();
    if (!out) throw std::runtime_error("checkpoint: write failed for " + path);
}

void save_student(const StudentModel& m, uint64_t seed, const std::string& path) {
    StudentModel& mut = const_cast<StudentModel&>(m);
    json doc;
    doc["kind"] = "student";
    doc["seed"] = seed;
    doc["hyper"] = {{"input_dim", m.input_dim},
                    {"hidden", m.hidden},
                    {"actions", m.slots.actions},
                    {"objects", m.slots.objects},
                    {"locations", m.slots.locations}};
    doc["params"] = params_to_json([&](auto f) { mut.visit_params(f); });
    write_doc(doc, path);
}

StudentModel load_student(const std::string& path) {
    json doc = load_doc(path);
    if (doc.at("kind") != "student")
        throw std::runtime_error("checkpoint: expected a student model in " + path);
    const json& h = doc.at("hyper");
    SlotSpaces slots{h.at("actions").get<int>(), h.at("objects").get<int>(),
                     h.at("locations").get<int>()};
    StudentModel m = StudentModel::init(h.at("input_dim").get<int>(), h.at("hidden").get<int>(),
                                        slots, doc.at("seed").get<uint64_t>());
    params_from_json(doc.at("params"), [&](auto f) { m.visit_params(f); });
    return m;
}

void save_encoder(const TextEncoderModel& m, uint64_t seed, const std::string& path) {
    TextEncoderModel& mut = const_cast<TextEncoderModel&>(m);
    json doc;
    doc["kind"] = m.head == HeadKind::ClsPooled ? "teacher" : "professor";
    doc["seed"] = seed;
    doc["hyper"] = {{"vocab", m.vocab},       {"d_model", m.d_model}, {"n_layers", m.n_layers},
                    {"n_heads", m.n_heads},   {"ff_dim", m.ff_dim},   {"positional", m.positional},
                    {"actions", m.slots.actions}, {"objects", m.slots.objects},
                    {"locations", m.slots.locations}};
    doc["params"] = params_to_json([&](auto f) { mut.visit_params(f); });
    write_doc(doc, path);
}

TextEncoderModel load_encoder(const std::string& path) {
    json doc = load_doc(path);
    const std::string kind = doc.at("kind").get<std::string>();
    if (kind != "teacher" && kind != "professor")
        throw std::runtime_error("checkpoint: expected a teacher/professor model in " + path);
    const json& h = doc.at("hyper");
    SlotSpaces slots{h.at("actions").get<int>(), h.at("objects").get<int>(),
                     h.at("locations").get<int>()};
    TextEncoderModel m = TextEncoderModel::init(
        kind == "teacher" ? HeadKind::ClsPooled : HeadKind::MaxPooled, h.at("vocab").get<int>(),
        slots, doc.at("seed").get<uint64_t>(), h.at("d_model").get<int>(),
        h.at("n_layers").get<int>(), h.at("n_heads").get<int>(), h.at("ff_dim").get<int>(),
        h.at("positional").get<bool>());
    params_from_json(doc.at("params"), [&](auto f) { m.visit_params(f); });
    return m;
}

std::string checkpoint_kind(const std::string& path) {
    return load_doc(path).at("kind").get<std::string>();
}

}  // namespace slukd
