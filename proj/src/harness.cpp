#include "udsc/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>
#include <yaml-cpp/yaml.h>

#include "udsc/error.hpp"

#ifndef UDSC_VERSION
#define UDSC_VERSION "0.0.0+unknown"
#endif

namespace udsc::harness {

using nlohmann::json;

std::string version_string() { return UDSC_VERSION; }

std::vector<double> EvalSettings::grid() const {
    if (!(snr_step > 0.0)) throw Error(ErrorCode::config_invalid, "eval.snr_step must be positive");
    if (snr_max < snr_min) throw Error(ErrorCode::config_invalid, "eval.snr_max must be >= eval.snr_min");
    std::vector<double> g;
    const int count = static_cast<int>(std::floor((snr_max - snr_min) / snr_step + 1e-9)) + 1;
    for (int i = 0; i < count; ++i) g.push_back(snr_min + i * snr_step);
    return g;
}

adaptation::PartitionMap ExperimentConfig::partition_map() const {
    adaptation::PartitionMap map = adaptation::PartitionMap::make_default(model.image_rows(), model.text_len,
                                                                          partition.private_rows, partition.shared_rows);
    for (const auto& [task, modality, rows] : partition.overrides) map.set(task, modality, rows);
    return map;
}

void ExperimentConfig::validate() const {
    auto fail = [](const std::string& m) { throw Error(ErrorCode::config_invalid, m); };
    model.validate();
    train.validate();
    baseline.validate();
    (void)eval.grid();
    if (eval.seeds < 1) fail("eval.seeds must be >= 1");
    if (eval.batch_size < 1) fail("eval.batch_size must be >= 1");
    if (tasks.empty()) fail("tasks must not be empty");
    for (TaskId t : kAllTasks) {
        const int layer = exits.exit_layer_for(t);
        if (layer > model.decoder_layers)
            fail("exits." + std::string(to_string(t)) + ": layer " + std::to_string(layer) +
                 " exceeds model.decoder_layers (" + std::to_string(model.decoder_layers) + ")");
    }
    for (TaskId t : tasks) {
        auto it = data.train_size.find(t);
        if (it == data.train_size.end() || it->second <= 0)
            fail("data.train_size." + std::string(to_string(t)) + " must be positive for an enabled task");
        if (std::find(train.tasks.begin(), train.tasks.end(), t) == train.tasks.end())
            fail("train.tasks must match tasks");
    }
    if (train.tasks.size() != tasks.size()) fail("train.tasks must match tasks");
    if (data.test_size <= 0) fail("data.test_size must be positive");
    if (data.image_size != model.image_size) fail("data.image_size must equal model.image_size");
    if (data.text_len != model.text_len) fail("data.text_len must equal model.text_len");
    partition_map().validate(tasks, model.image_rows(), model.text_len);
}

// ------------------------------------------------------------ YAML parsing

namespace {

class Section {
public:
    Section(YAML::Node node, std::string path, const std::string& origin)
        : node_(std::move(node)), path_(std::move(path)), origin_(origin) {
        if (node_ && !node_.IsNull() && !node_.IsMap()) fail(node_, "expected a mapping");
    }

    bool has(const std::string& key) const { return node_ && node_.IsMap() && node_[key]; }

    template <typename T>
    void get(const std::string& key, T& out) {
        seen_.insert(key);
        if (!has(key)) return;
        const YAML::Node n = node_[key];
        try {
            out = n.as<T>();
        } catch (const YAML::Exception&) {
            fail(n, "invalid value for " + name(key));
        }
    }

    void get_task_list(const std::string& key, std::vector<TaskId>& out) {
        seen_.insert(key);
        if (!has(key)) return;
        const YAML::Node n = node_[key];
        if (!n.IsSequence()) fail(n, name(key) + " must be a list of task names");
        out.clear();
        for (const YAML::Node& item : n) out.push_back(task(item, name(key)));
    }

    TaskId task(const YAML::Node& n, const std::string& what) const {
        try {
            return task_from_string(n.as<std::string>());
        } catch (const std::exception&) {
            fail(n, what + ": unknown task '" + (n.IsScalar() ? n.Scalar() : std::string("?")) + "'");
        }
    }

    Section child(const std::string& key) {
        seen_.insert(key);
        return Section(has(key) ? node_[key] : YAML::Node(), name(key), origin_);
    }

    YAML::Node raw(const std::string& key) {
        seen_.insert(key);
        return has(key) ? node_[key] : YAML::Node();
    }

    // Rejects keys that were never read.
    void finish() const {
        if (!node_ || !node_.IsMap()) return;
        for (const auto& kv : node_) {
            const std::string key = kv.first.as<std::string>();
            if (!seen_.count(key)) fail(kv.first, "unknown key " + name(key));
        }
    }

    [[noreturn]] void fail(const YAML::Node& n, const std::string& message) const {
        const YAML::Mark mark = n.Mark();
        std::string where = origin_;
        where += mark.line >= 0 ? ":" + std::to_string(mark.line + 1) : " (override)";
        throw Error(ErrorCode::config_invalid, where + ": " + message);
    }

    std::string name(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }
    const YAML::Node& node() const { return node_; }

private:
    YAML::Node node_;
    std::string path_;
    const std::string& origin_;
    std::set<std::string> seen_;
};

void apply_override(YAML::Node& root, const std::string& spec) {
    const auto eq = spec.find('=');
    if (eq == std::string::npos || eq == 0)
        throw Error(ErrorCode::config_invalid, "override '" + spec + "' must look like dotted.key=value");
    const std::string key = spec.substr(0, eq);
    const std::string value = spec.substr(eq + 1);
    std::vector<std::string> parts;
    std::stringstream ss(key);
    for (std::string p; std::getline(ss, p, '.');) {
        if (p.empty()) throw Error(ErrorCode::config_invalid, "override '" + spec + "' has an empty key segment");
        parts.push_back(p);
    }
    YAML::Node parsed;
    try {
        parsed = YAML::Load(value);
    } catch (const YAML::Exception& e) {
        throw Error(ErrorCode::config_invalid, "override '" + spec + "': " + e.what());
    }
    // yaml-cpp nodes are handles, so walking with reset() rebinds without
    // assigning through to the parent.
    YAML::Node cur;
    cur.reset(root);
    for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
        YAML::Node next = cur[parts[i]];
        if (next && !next.IsMap() && !next.IsNull())
            throw Error(ErrorCode::config_invalid, "override '" + spec + "': " + parts[i] + " is not a section");
        if (!next || next.IsNull()) {
            cur[parts[i]] = YAML::Node(YAML::NodeType::Map);
            next = cur[parts[i]];
        }
        cur.reset(next);
    }
    cur[parts.back()] = parsed;
}

void read_partition(Section sec, ExperimentConfig& cfg) {
    sec.get("private_rows", cfg.partition.private_rows);
    sec.get("shared_rows", cfg.partition.shared_rows);
    YAML::Node ov = sec.raw("overrides");
    if (ov && !ov.IsNull()) {
        if (!ov.IsMap()) sec.fail(ov, "partition.overrides must map task -> modality -> rows");
        cfg.partition.overrides.clear();
        for (const auto& kv : ov) {
            const TaskId task = sec.task(kv.first, "partition.overrides");
            if (!kv.second.IsMap()) sec.fail(kv.second, "partition.overrides entries must be mappings");
            for (const auto& mv : kv.second) {
                const std::string mod = mv.first.as<std::string>();
                Modality m;
                if (mod == "image") m = Modality::image;
                else if (mod == "text") m = Modality::text;
                else sec.fail(mv.first, "unknown modality '" + mod + "'");
                adaptation::RowPartition rp;
                try {
                    if (mv.second["private"]) rp.private_rows = mv.second["private"].as<std::vector<int>>();
                    if (mv.second["shared"]) rp.shared_rows = mv.second["shared"].as<std::vector<int>>();
                } catch (const YAML::Exception&) {
                    sec.fail(mv.second, "row lists must be integer sequences");
                }
                for (const auto& key : mv.second)
                    if (const auto k = key.first.as<std::string>(); k != "private" && k != "shared")
                        sec.fail(key.first, "unknown key " + k);
                cfg.partition.overrides.emplace_back(task, m, rp);
            }
        }
    }
    sec.finish();
}

ExperimentConfig build_config(const YAML::Node& root, const std::string& origin) {
    ExperimentConfig cfg;
    Section top(root, "", origin);
    top.get("seed", cfg.seed);
    std::string out = cfg.output_dir.string();
    top.get("output_dir", out);
    cfg.output_dir = out;
    top.get_task_list("tasks", cfg.tasks);

    {
        Section d = top.child("data");
        std::string root_dir;
        d.get("root", root_dir);
        cfg.data_root = root_dir;
        d.get("seed", cfg.data.seed);
        d.get("test_size", cfg.data.test_size);
        d.get("image_size", cfg.data.image_size);
        d.get("text_len", cfg.data.text_len);
        d.get("use_cache", cfg.data.use_cache);
        Section sizes = d.child("train_size");
        for (TaskId t : kAllTasks) sizes.get(std::string(to_string(t)), cfg.data.train_size[t]);
        sizes.finish();
        d.finish();
    }
    {
        Section m = top.child("model");
        ModelConfig& mc = cfg.model;
        m.get("d_model", mc.d_model);
        m.get("heads", mc.heads);
        m.get("ff_dim", mc.ff_dim);
        m.get("image_layers", mc.image_layers);
        m.get("text_layers", mc.text_layers);
        m.get("decoder_layers", mc.decoder_layers);
        m.get("symbols_per_row", mc.symbols_per_row);
        m.get("image_size", mc.image_size);
        m.get("channels", mc.channels);
        m.get("patch_size", mc.patch_size);
        m.get("text_len", mc.text_len);
        m.get("retrieval_dim", mc.retrieval_dim);
        m.get("triplet_margin", mc.triplet_margin);
        m.finish();
    }
    {
        Section e = top.child("exits");
        for (TaskId t : kAllTasks) {
            const std::string key(to_string(t));
            int layer = cfg.exits.exit_layer_for(t);
            e.get(key, layer);
            try {
                cfg.exits.set(t, layer);
            } catch (const Error& err) {
                e.fail(e.node()[key], std::string("exits.") + key + ": " + err.what());
            }
        }
        e.finish();
    }
    read_partition(top.child("partition"), cfg);
    {
        Section t = top.child("train");
        training::TrainConfig& tc = cfg.train;
        t.get("iterations", tc.iterations);
        t.get("batch_size", tc.batch_size);
        t.get("lr", tc.optimizer.lr);
        t.get("weight_decay", tc.optimizer.weight_decay);
        t.get("beta1", tc.optimizer.beta1);
        t.get("beta2", tc.optimizer.beta2);
        t.get("eps", tc.optimizer.eps);
        t.get("grad_clip", tc.optimizer.grad_clip);
        t.get("warmup_iterations", tc.warmup_iterations);
        t.get("snr_db", tc.channel.snr_db);
        t.get("adaptation", tc.adaptation);
        t.get("adaptation_normalized", tc.adaptation_normalized);
        t.get("sampling_exponent", tc.sampling_exponent);
        t.get("log_every", tc.log_every);
        t.get("checkpoint_every", tc.checkpoint_every);
        if (t.has("loss_weights")) {
            Section w = t.child("loss_weights");
            for (TaskId task : kAllTasks)
                if (const std::string key(to_string(task)); w.has(key)) w.get(key, tc.loss_weights[task]);
            w.finish();
        }
        t.finish();
    }
    {
        Section c = top.child("channel");
        std::string mode = cfg.train.channel.mode == channel::Mode::awgn ? "awgn" : "rayleigh";
        c.get("mode", mode);
        if (mode == "awgn") cfg.train.channel.mode = channel::Mode::awgn;
        else if (mode == "rayleigh") cfg.train.channel.mode = channel::Mode::rayleigh;
        else c.fail(c.node()["mode"], "channel.mode must be awgn or rayleigh");
        c.get("n_t", cfg.train.channel.n_t);
        c.get("n_r", cfg.train.channel.n_r);
        c.get("seed", cfg.train.channel.seed);
        c.finish();
    }
    {
        Section e = top.child("eval");
        e.get("snr_min", cfg.eval.snr_min);
        e.get("snr_max", cfg.eval.snr_max);
        e.get("snr_step", cfg.eval.snr_step);
        e.get("seeds", cfg.eval.seeds);
        e.get("seed", cfg.eval.seed);
        e.get("max_samples", cfg.eval.max_samples);
        e.get("batch_size", cfg.eval.batch_size);
        e.get("ablation_snr_db", cfg.eval.ablation_snr_db);
        e.finish();
    }
    {
        Section b = top.child("baseline");
        b.get("jpeg_quality", cfg.baseline.jpeg_quality);
        b.get("rate", cfg.baseline.rate);
        b.get("constraint_length", cfg.baseline.constraint_length);
        b.get("modulation", cfg.baseline.modulation);
        b.finish();
    }
    top.finish();
    cfg.train.tasks = cfg.tasks;
    cfg.train.seed = cfg.seed;
    try {
        cfg.validate();
    } catch (const Error& e) {
        throw Error(ErrorCode::config_invalid, origin + ": " + e.what());
    }
    return cfg;
}

std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

std::string now_iso() {
    const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    std::ostringstream os;
    os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
    return os.str();
}

std::string read_text(const fs::path& file) {
    std::ifstream in(file);
    if (!in) throw Error(ErrorCode::missing_file, "cannot open " + file.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

} // namespace

ExperimentConfig parse_config(const std::string& yaml_text, const std::vector<std::string>& overrides,
                              const std::string& origin) {
    YAML::Node root;
    try {
        root = YAML::Load(yaml_text);
    } catch (const YAML::ParserException& e) {
        throw Error(ErrorCode::config_invalid,
                    origin + ":" + std::to_string(e.mark.line + 1) + ": " + e.msg);
    }
    if (!root || root.IsNull()) root = YAML::Node(YAML::NodeType::Map);
    for (const std::string& o : overrides) apply_override(root, o);
    return build_config(root, origin);
}

ExperimentConfig load_config(const fs::path& file, const std::vector<std::string>& overrides) {
    const std::string text = read_text(file);
    // A run manifest carries its config snapshot and hash.
    const json j = json::parse(text, nullptr, false);
    if (!j.is_discarded() && j.is_object() && j.contains("config_hash") && j.contains("config")) {
        ExperimentConfig cfg = parse_config(j.at("config").get<std::string>(), {}, file.string() + "#config");
        if (config_hash(cfg) != j.at("config_hash").get<std::string>())
            throw Error(ErrorCode::schema_mismatch, file.string() + ": config hash does not match the embedded config");
        if (overrides.empty()) return cfg;
        return parse_config(config_json(cfg), overrides, file.string() + "#config");
    }
    return parse_config(text, overrides, file.string());
}

std::string config_json(const ExperimentConfig& cfg) {
    json j;
    j["seed"] = cfg.seed;
    j["output_dir"] = cfg.output_dir.string();
    for (TaskId t : cfg.tasks) j["tasks"].push_back(std::string(to_string(t)));
    j["data"]["root"] = cfg.data_root.string();
    j["data"]["seed"] = cfg.data.seed;
    j["data"]["test_size"] = cfg.data.test_size;
    j["data"]["image_size"] = cfg.data.image_size;
    j["data"]["text_len"] = cfg.data.text_len;
    j["data"]["use_cache"] = cfg.data.use_cache;
    for (const auto& [t, n] : cfg.data.train_size) j["data"]["train_size"][std::string(to_string(t))] = n;
    const ModelConfig& m = cfg.model;
    j["model"] = {{"d_model", m.d_model},           {"heads", m.heads},
                  {"ff_dim", m.ff_dim},             {"image_layers", m.image_layers},
                  {"text_layers", m.text_layers},   {"decoder_layers", m.decoder_layers},
                  {"symbols_per_row", m.symbols_per_row}, {"image_size", m.image_size},
                  {"channels", m.channels},         {"patch_size", m.patch_size},
                  {"text_len", m.text_len},         {"retrieval_dim", m.retrieval_dim},
                  {"triplet_margin", m.triplet_margin}};
    for (TaskId t : kAllTasks) j["exits"][std::string(to_string(t))] = cfg.exits.exit_layer_for(t);
    j["partition"]["private_rows"] = cfg.partition.private_rows;
    j["partition"]["shared_rows"] = cfg.partition.shared_rows;
    for (const auto& [task, modality, rows] : cfg.partition.overrides) {
        auto& e = j["partition"]["overrides"][std::string(to_string(task))][std::string(to_string(modality))];
        e["private"] = rows.private_rows;
        e["shared"] = rows.shared_rows;
    }
    const training::TrainConfig& t = cfg.train;
    j["train"] = {{"iterations", t.iterations},
                  {"batch_size", t.batch_size},
                  {"lr", t.optimizer.lr},
                  {"weight_decay", t.optimizer.weight_decay},
                  {"beta1", t.optimizer.beta1},
                  {"beta2", t.optimizer.beta2},
                  {"eps", t.optimizer.eps},
                  {"grad_clip", t.optimizer.grad_clip},
                  {"warmup_iterations", t.warmup_iterations},
                  {"snr_db", t.channel.snr_db},
                  {"adaptation", t.adaptation},
                  {"adaptation_normalized", t.adaptation_normalized},
                  {"sampling_exponent", t.sampling_exponent},
                  {"log_every", t.log_every},
                  {"checkpoint_every", t.checkpoint_every}};
    for (TaskId task : kAllTasks) {
        auto it = t.loss_weights.find(task);
        j["train"]["loss_weights"][std::string(to_string(task))] = it == t.loss_weights.end() ? 1.0 : it->second;
    }
    j["channel"] = {{"mode", t.channel.mode == channel::Mode::awgn ? "awgn" : "rayleigh"},
                    {"n_t", t.channel.n_t},
                    {"n_r", t.channel.n_r},
                    {"seed", t.channel.seed}};
    j["eval"] = {{"snr_min", cfg.eval.snr_min},       {"snr_max", cfg.eval.snr_max},
                 {"snr_step", cfg.eval.snr_step},     {"seeds", cfg.eval.seeds},
                 {"seed", cfg.eval.seed},             {"max_samples", cfg.eval.max_samples},
                 {"batch_size", cfg.eval.batch_size}, {"ablation_snr_db", cfg.eval.ablation_snr_db}};
    j["baseline"] = {{"jpeg_quality", cfg.baseline.jpeg_quality},
                     {"rate", cfg.baseline.rate},
                     {"constraint_length", cfg.baseline.constraint_length},
                     {"modulation", cfg.baseline.modulation}};
    return j.dump();
}

std::string config_hash(const ExperimentConfig& cfg) {
    json j = json::parse(config_json(cfg));
    j.erase("output_dir");
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0') << fnv1a(j.dump());
    return os.str();
}

// ------------------------------------------------------------ manifests

void write_manifest(const RunManifest& m, const fs::path& file) {
    json j = {{"run_id", m.run_id},   {"command", m.command}, {"config_hash", m.config_hash},
              {"config", m.config},   {"seed", m.seed},       {"version", m.version},
              {"started", m.started}, {"finished", m.finished}, {"artifacts", m.artifacts}};
    if (file.has_parent_path()) fs::create_directories(file.parent_path());
    std::ofstream out(file);
    if (!out) throw Error(ErrorCode::io, "cannot write " + file.string());
    out << j.dump(2) << '\n';
}

RunManifest read_manifest(const fs::path& file) {
    const json j = json::parse(read_text(file), nullptr, false);
    if (j.is_discarded() || !j.is_object()) throw Error(ErrorCode::schema_mismatch, file.string() + ": not a manifest");
    RunManifest m;
    try {
        m.run_id = j.at("run_id").get<std::string>();
        m.command = j.at("command").get<std::string>();
        m.config_hash = j.at("config_hash").get<std::string>();
        m.config = j.at("config").get<std::string>();
        m.seed = j.at("seed").get<std::uint64_t>();
        m.version = j.at("version").get<std::string>();
        m.started = j.at("started").get<std::string>();
        m.finished = j.at("finished").get<std::string>();
        m.artifacts = j.at("artifacts").get<std::map<std::string, std::string>>();
    } catch (const json::exception& e) {
        throw Error(ErrorCode::schema_mismatch, file.string() + ": " + e.what());
    }
    return m;
}

// ------------------------------------------------------------ results CSV

const std::vector<std::string>& results_columns() {
    static const std::vector<std::string> cols{"system", "task", "snr_db", "metric", "value", "std", "n",
                                               "seed", "model_tag", "exit_layer", "rows_selected", "rows_total",
                                               "symbols_sent", "codec_deviation"};
    return cols;
}

namespace {

std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + '"';
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
                cur += '"';
                ++i;
            } else if (c == '"') {
                quoted = false;
            } else {
                cur += c;
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            fields.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    fields.push_back(cur);
    return fields;
}

std::string fmt(double v) {
    std::ostringstream os;
    os << std::setprecision(10) << v;
    return os.str();
}

} // namespace

void write_results_csv(const fs::path& file, const std::vector<ResultRow>& rows) {
    if (file.has_parent_path()) fs::create_directories(file.parent_path());
    std::ofstream out(file);
    if (!out) throw Error(ErrorCode::io, "cannot write " + file.string());
    out << kResultsSchema << '\n';
    const auto& cols = results_columns();
    for (std::size_t i = 0; i < cols.size(); ++i) out << (i ? "," : "") << cols[i];
    out << '\n';
    for (const ResultRow& r : rows)
        out << csv_field(r.system) << ',' << to_string(r.task) << ',' << fmt(r.snr_db) << ',' << csv_field(r.metric)
            << ',' << fmt(r.value) << ',' << fmt(r.std) << ',' << r.n << ',' << r.seed << ',' << csv_field(r.model_tag)
            << ',' << r.exit_layer << ',' << r.rows_selected << ',' << r.rows_total << ',' << r.symbols_sent << ','
            << csv_field(r.codec_deviation) << '\n';
}

std::vector<ResultRow> read_results_csv(const fs::path& file) {
    std::ifstream in(file);
    if (!in) throw Error(ErrorCode::missing_file, "cannot open " + file.string());
    std::string line;
    auto bad = [&](std::size_t line_no, const std::string& msg) {
        return Error(ErrorCode::schema_mismatch, file.string() + ":" + std::to_string(line_no) + ": " + msg);
    };
    if (!std::getline(in, line) || line != kResultsSchema)
        throw bad(1, std::string("expected schema line '") + kResultsSchema + "'");
    if (!std::getline(in, line)) throw bad(2, "missing header");
    const std::vector<std::string> header = split_csv_line(line);
    const auto& cols = results_columns();
    for (const std::string& c : cols)
        if (std::find(header.begin(), header.end(), c) == header.end()) throw bad(2, "missing column '" + c + "'");
    if (header != cols) throw bad(2, "columns out of order or unexpected");
    std::vector<ResultRow> rows;
    std::size_t line_no = 2;
    static const std::set<std::string> systems{"udeepsc", "tdeepsc", "conventional", "upper_bound"};
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        const std::vector<std::string> f = split_csv_line(line);
        if (f.size() != cols.size()) throw bad(line_no, "expected " + std::to_string(cols.size()) + " fields");
        ResultRow r;
        try {
            r.system = f[0];
            if (!systems.count(r.system)) throw bad(line_no, "unknown system '" + r.system + "'");
            r.task = task_from_string(f[1]);
            r.snr_db = std::stod(f[2]);
            r.metric = f[3];
            r.value = std::stod(f[4]);
            r.std = std::stod(f[5]);
            r.n = std::stoi(f[6]);
            r.seed = std::stoull(f[7]);
            r.model_tag = f[8];
            r.exit_layer = std::stoi(f[9]);
            r.rows_selected = std::stoi(f[10]);
            r.rows_total = std::stoi(f[11]);
            r.symbols_sent = std::stoi(f[12]);
            r.codec_deviation = f[13];
        } catch (const Error&) {
            throw;
        } catch (const std::exception&) {
            throw bad(line_no, "malformed field");
        }
        if (r.metric != metric_name(task_spec(r.task).metric)) throw bad(line_no, "metric does not match task");
        rows.push_back(std::move(r));
    }
    return rows;
}

// ------------------------------------------------------------ plots

std::vector<fs::path> plot_results(const std::vector<ResultRow>& rows, const fs::path& out_dir) {
    fs::create_directories(out_dir);
    static const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf"};
    std::vector<fs::path> written;
    for (TaskId task : kAllTasks) {
        std::map<std::string, std::vector<std::pair<double, double>>> series;
        for (const ResultRow& r : rows)
            if (r.task == task) series[r.model_tag.empty() ? r.system : r.system + " (" + r.model_tag + ")"]
                                    .emplace_back(r.snr_db, r.value);
        if (series.empty()) continue;
        double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
        for (auto& [name, pts] : series) {
            std::sort(pts.begin(), pts.end());
            for (auto [x, y] : pts) {
                xmin = std::min(xmin, x);
                xmax = std::max(xmax, x);
                ymin = std::min(ymin, y);
                ymax = std::max(ymax, y);
            }
        }
        if (xmax == xmin) xmax = xmin + 1;
        if (ymax == ymin) ymax = ymin + 1;
        const double pad = 0.05 * (ymax - ymin);
        ymin -= pad;
        ymax += pad;
        const double W = 640, H = 420, L = 70, R = 200, T = 40, B = 50;
        auto px = [&](double x) { return L + (x - xmin) / (xmax - xmin) * (W - L - R); };
        auto py = [&](double y) { return H - B - (y - ymin) / (ymax - ymin) * (H - T - B); };
        std::ostringstream svg;
        svg << std::fixed << std::setprecision(2);
        svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
            << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
        svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
        const std::string metric(metric_name(task_spec(task).metric));
        svg << "<text x=\"" << W / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" << to_string(task)
            << "</text>\n";
        svg << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B
            << "\" stroke=\"black\"/>\n";
        svg << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n";
        for (int i = 0; i <= 4; ++i) {
            const double xv = xmin + i * (xmax - xmin) / 4, yv = ymin + i * (ymax - ymin) / 4;
            svg << "<text x=\"" << px(xv) << "\" y=\"" << H - B + 18 << "\" text-anchor=\"middle\">" << fmt(xv)
                << "</text>\n";
            svg << "<text x=\"" << L - 6 << "\" y=\"" << py(yv) + 4 << "\" text-anchor=\"end\">"
                << std::setprecision(3) << yv << std::setprecision(2) << "</text>\n";
            svg << "<line x1=\"" << L << "\" y1=\"" << py(yv) << "\" x2=\"" << W - R << "\" y2=\"" << py(yv)
                << "\" stroke=\"#e0e0e0\"/>\n";
        }
        svg << "<text x=\"" << (L + W - R) / 2 << "\" y=\"" << H - 12 << "\" text-anchor=\"middle\">SNR (dB)</text>\n";
        svg << "<text x=\"16\" y=\"" << (T + H - B) / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 16 "
            << (T + H - B) / 2 << ")\">" << metric << "</text>\n";
        int idx = 0;
        for (const auto& [name, pts] : series) {
            const char* color = kColors[idx % 7];
            svg << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
            for (auto [x, y] : pts) svg << px(x) << ',' << py(y) << ' ';
            svg << "\"/>\n";
            for (auto [x, y] : pts)
                svg << "<circle cx=\"" << px(x) << "\" cy=\"" << py(y) << "\" r=\"3\" fill=\"" << color << "\"/>\n";
            const double ly = T + 10 + idx * 18;
            svg << "<line x1=\"" << W - R + 12 << "\" y1=\"" << ly << "\" x2=\"" << W - R + 32 << "\" y2=\"" << ly
                << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
            svg << "<text x=\"" << W - R + 36 << "\" y=\"" << ly + 4 << "\">" << name << "</text>\n";
            ++idx;
        }
        svg << "</svg>\n";
        const fs::path file = out_dir / (std::string(to_string(task)) + ".svg");
        std::ofstream out(file);
        if (!out) throw Error(ErrorCode::io, "cannot write " + file.string());
        out << svg.str();
        written.push_back(file);
    }
    return written;
}

// ------------------------------------------------------------ commands

void prepare_output_dir(const fs::path& dir, bool force) {
    if (fs::exists(dir) && !fs::is_directory(dir))
        throw Error(ErrorCode::output_exists, dir.string() + " exists and is not a directory");
    if (fs::exists(dir) && !fs::is_empty(dir) && !force)
        throw Error(ErrorCode::output_exists, dir.string() + " is not empty; pass --force to overwrite");
    fs::create_directories(dir);
}

namespace {

void refuse_overwrite(const fs::path& file, bool force) {
    if (fs::exists(file) && !force)
        throw Error(ErrorCode::output_exists, file.string() + " exists; pass --force to overwrite");
}

ExperimentConfig with_options(ExperimentConfig cfg, const CommandOptions& options) {
    if (options.seed) {
        cfg.seed = *options.seed;
        cfg.train.seed = *options.seed;
    }
    if (options.out) cfg.output_dir = *options.out;
    cfg.validate();
    return cfg;
}

datasets::DataOptions data_options(const ExperimentConfig& cfg) {
    datasets::DataOptions o = cfg.data;
    o.image_size = cfg.model.image_size;
    o.text_len = cfg.model.text_len;
    return o;
}

ModelConfig completed_model(const ExperimentConfig& cfg, const datasets::Vocabulary& vocab) {
    ModelConfig m = cfg.model;
    m.vocab_size = vocab.size();
    m.num_answers = static_cast<int>(datasets::vqa_answers().size());
    return m;
}

training::EvalOptions eval_options(const ExperimentConfig& cfg, std::vector<double> grid) {
    training::EvalOptions eo;
    eo.snr_grid = std::move(grid);
    eo.mode = cfg.train.channel.mode;
    eo.n_t = cfg.train.channel.n_t;
    eo.n_r = cfg.train.channel.n_r;
    eo.seeds = cfg.eval.seeds;
    eo.seed = cfg.eval.seed;
    eo.batch_size = cfg.eval.batch_size;
    eo.max_samples = cfg.eval.max_samples;
    return eo;
}

struct TrainedRun {
    std::unique_ptr<model::UnifiedModel> model;
    training::TrainResult result;
    training::Checkpoint checkpoint;
};

TrainedRun train_model(const ExperimentConfig& cfg, const datasets::DataBundle& data, std::optional<TaskId> single,
                       const fs::path& dir, bool quiet) {
    TrainedRun run;
    run.model = std::make_unique<model::UnifiedModel>(completed_model(cfg, data.vocab), cfg.partition_map(), cfg.exits,
                                                      cfg.seed);
    auto snapshot = [&](long iteration) {
        training::Checkpoint c = training::make_checkpoint(*run.model, data.vocab, cfg.seed);
        c.system = single ? "tdeepsc" : "udeepsc";
        c.config_json = config_json(cfg);
        c.iteration = iteration;
        return c;
    };
    long last = 0;
    training::LogCallback log = [&](const training::LossRecord& r) {
        last = r.iteration;
        if (!quiet)
            std::cerr << "iter " << r.iteration << " " << to_string(r.task_a) << "=" << r.loss.task_loss_a
                      << (r.task_b ? " " + std::string(to_string(*r.task_b)) + "=" + std::to_string(r.loss.task_loss_b)
                                   : std::string())
                      << " La=" << r.loss.adaptation << " total=" << r.loss.total << '\n';
        if (cfg.train.checkpoint_every > 0 && r.iteration % cfg.train.checkpoint_every == 0)
            training::save_checkpoint(snapshot(r.iteration), dir / "model.ckpt");
    };
    try {
        run.result = single ? training::train_single_task(*run.model, data, *single, cfg.train, log)
                            : training::train(*run.model, data, cfg.train, log);
    } catch (const Error& e) {
        if (e.code() == ErrorCode::non_finite_loss) training::save_checkpoint(snapshot(last), dir / "failed.ckpt");
        throw;
    }
    run.checkpoint = snapshot(run.result.iterations);
    return run;
}

double quick_metric(const model::UnifiedModel& m, const datasets::Dataset& test, const ExperimentConfig& cfg,
                    double snr) {
    const auto reports = training::evaluate(m, test, eval_options(cfg, {snr}));
    return reports.front().value;
}

} // namespace

RunManifest cmd_train(const fs::path& config_path, const CommandOptions& options) {
    return cmd_train(load_config(config_path, options.overrides), options);
}

RunManifest cmd_train(ExperimentConfig cfg, const CommandOptions& options) {
    cfg = with_options(std::move(cfg), options);
    if (options.task && std::find(cfg.tasks.begin(), cfg.tasks.end(), *options.task) == cfg.tasks.end())
        throw Error(ErrorCode::config_invalid, "--task " + std::string(to_string(*options.task)) + " is not enabled");
    const fs::path dir = cfg.output_dir;
    prepare_output_dir(dir, options.force);
    RunManifest manifest;
    manifest.started = now_iso();
    manifest.command = options.task ? "train --task " + std::string(to_string(*options.task)) : "train";
    manifest.config = config_json(cfg);
    manifest.config_hash = config_hash(cfg);
    manifest.seed = cfg.seed;
    manifest.version = version_string();
    manifest.run_id = manifest.config_hash.substr(0, 8) + "-" + std::to_string(cfg.seed) +
                      (options.task ? "-" + std::string(to_string(*options.task)) : "");

    const datasets::DataBundle data = datasets::load_all(cfg.tasks, cfg.data_root, data_options(cfg));
    TrainedRun run = train_model(cfg, data, options.task, dir, options.quiet);
    for (TaskId t : options.task ? std::vector<TaskId>{*options.task} : cfg.tasks)
        run.checkpoint.best_metrics[std::string(to_string(t))] =
            quick_metric(*run.model, data.test.at(t), cfg, cfg.eval.ablation_snr_db);
    training::save_checkpoint(run.checkpoint, dir / "model.ckpt");
    training::write_loss_csv(dir / "loss.csv", run.result.history);
    manifest.artifacts["checkpoint"] = (dir / "model.ckpt").string();
    manifest.artifacts["loss_csv"] = (dir / "loss.csv").string();
    manifest.finished = now_iso();
    write_manifest(manifest, dir / "manifest.json");
    return manifest;
}

datasets::DataBundle load_checkpoint_data(const training::Checkpoint& checkpoint, const ExperimentConfig& cfg) {
    datasets::DataBundle bundle;
    bundle.vocab = datasets::Vocabulary::from_tokens(checkpoint.vocabulary);
    const datasets::DataOptions o = data_options(cfg);
    for (TaskId t : cfg.tasks) {
        datasets::Dataset test = datasets::load_task_dataset(t, Split::test, cfg.data_root, o);
        bundle.test[t] = datasets::tokenize_dataset(std::move(test), bundle.vocab, cfg.model.text_len);
    }
    return bundle;
}

std::vector<ResultRow> cmd_sweep(const fs::path& checkpoint_path, const std::vector<TaskId>& tasks, double snr_min,
                                 double snr_max, double snr_step, const CommandOptions& options) {
    const training::Checkpoint ckpt = training::load_checkpoint(checkpoint_path);
    ExperimentConfig cfg = parse_config(ckpt.config_json, {}, checkpoint_path.string() + "#config");
    if (options.seed) cfg.eval.seed = *options.seed;
    EvalSettings grid_settings = cfg.eval;
    grid_settings.snr_min = snr_min;
    grid_settings.snr_max = snr_max;
    grid_settings.snr_step = snr_step;
    const std::vector<double> grid = grid_settings.grid();
    const fs::path out = options.out ? *options.out : checkpoint_path.parent_path() / "results.csv";
    refuse_overwrite(out, options.force);

    std::vector<TaskId> selected = tasks.empty() ? cfg.tasks : tasks;
    if (ckpt.system == "tdeepsc") {
        // A single-task checkpoint only serves the task it was trained on.
        const auto& trained = ckpt.best_metrics;
        selected.erase(std::remove_if(selected.begin(), selected.end(),
                                      [&](TaskId t) { return !trained.count(std::string(to_string(t))); }),
                       selected.end());
    }
    if (options.task) selected = {*options.task};
    if (selected.empty()) throw Error(ErrorCode::invalid_argument, "no tasks to sweep");
    const std::unique_ptr<model::UnifiedModel> model = training::restore_model(ckpt);
    const datasets::DataBundle data = load_checkpoint_data(ckpt, cfg);

    std::vector<ResultRow> rows;
    for (TaskId task : selected) {
        auto test_it = data.test.find(task);
        if (test_it == data.test.end())
            throw Error(ErrorCode::invalid_argument, "missing test split for " + std::string(to_string(task)));
        const datasets::Dataset& test = test_it->second;
        int rows_selected = 0, rows_total = 0;
        for (Modality m : {Modality::image, Modality::text}) {
            if (!task_spec(task).uses(m)) continue;
            rows_selected += static_cast<int>(model->partition().selected(task, m).size());
            rows_total += m == Modality::image ? model->config().image_rows() : model->config().text_len;
        }
        auto make_row = [&](const objectives::MetricReport& r, const std::string& system) {
            ResultRow row;
            row.system = system;
            row.task = task;
            row.snr_db = r.snr_db;
            row.metric = r.metric;
            row.value = r.value;
            row.std = r.std;
            row.n = r.sample_count;
            row.seed = r.seed;
            row.model_tag = ckpt.system == "tdeepsc" ? "tdeepsc-" + std::string(to_string(task)) : ckpt.system;
            row.exit_layer = model->exit_layer_for(task);
            row.rows_selected = rows_selected;
            row.rows_total = rows_total;
            row.symbols_sent = rows_selected * model->config().symbols_per_row;
            return row;
        };
        training::EvalOptions eo = eval_options(cfg, grid);
        for (const auto& r : training::evaluate(*model, test, eo)) rows.push_back(make_row(r, ckpt.system));
        if (options.noiseless) {
            eo.noiseless = true;
            for (const auto& r : training::evaluate(*model, test, eo)) rows.push_back(make_row(r, "upper_bound"));
        }
        if (options.conventional && task_spec(task).reconstruction) {
            baselines::SweepOptions so;
            so.snr_grid = grid;
            so.mode = cfg.train.channel.mode;
            so.seeds = cfg.eval.seeds;
            so.seed = cfg.eval.seed;
            so.max_samples = cfg.eval.max_samples;
            for (const auto& b : baselines::evaluate_conventional(test, cfg.baseline, so)) {
                ResultRow row;
                row.system = "conventional";
                row.task = task;
                row.snr_db = b.metric.snr_db;
                row.metric = b.metric.metric;
                row.value = b.metric.value;
                row.std = b.metric.std;
                row.n = b.metric.sample_count;
                row.seed = b.metric.seed;
                row.model_tag = "jpeg+conv" ;
                if (task == TaskId::text_recon) row.model_tag = "utf8+conv";
                row.symbols_sent = static_cast<int>(std::lround(b.mean_symbols));
                row.codec_deviation = b.codec_deviation;
                rows.push_back(row);
            }
        }
    }
    write_results_csv(out, rows);
    return rows;
}

namespace {

struct PublishedAblation {
    double without_adaptation, with_adaptation;
};

const std::map<TaskId, PublishedAblation>& published_ablation() {
    static const std::map<TaskId, PublishedAblation> values{{TaskId::retrieval, {70.0, 73.9}},
                                                        {TaskId::vqa, {57.8, 60.9}},
                                                        {TaskId::text_recon, {0.94, 0.96}},
                                                        {TaskId::image_recon, {31.9, 32.0}},
                                                        {TaskId::sentiment, {80.1, 84.2}}};
    return values;
}

} // namespace

std::vector<AblationRow> cmd_ablate_adaptation(const fs::path& config_path, const CommandOptions& options) {
    return cmd_ablate_adaptation(load_config(config_path, options.overrides), options);
}

std::vector<AblationRow> cmd_ablate_adaptation(ExperimentConfig cfg, const CommandOptions& options) {
    cfg = with_options(std::move(cfg), options);
    const fs::path dir = cfg.output_dir;
    prepare_output_dir(dir, options.force);
    const datasets::DataBundle data = datasets::load_all(cfg.tasks, cfg.data_root, data_options(cfg));
    std::map<bool, std::map<TaskId, double>> metrics;
    std::vector<std::vector<std::pair<TaskId, std::optional<TaskId>>>> sequences;
    for (bool with : {false, true}) {
        ExperimentConfig twin = cfg;
        twin.train.adaptation = with;
        const fs::path sub = dir / (with ? "with_adaptation" : "without_adaptation");
        fs::create_directories(sub);
        TrainedRun run = train_model(twin, data, std::nullopt, sub, options.quiet);
        for (TaskId t : cfg.tasks) {
            metrics[with][t] = quick_metric(*run.model, data.test.at(t), twin, cfg.eval.ablation_snr_db);
            run.checkpoint.best_metrics[std::string(to_string(t))] = metrics[with][t];
        }
        training::save_checkpoint(run.checkpoint, sub / "model.ckpt");
        training::write_loss_csv(sub / "loss.csv", run.result.history);
    }
    std::vector<AblationRow> rows;
    for (TaskId t : cfg.tasks) {
        AblationRow r;
        r.task = t;
        r.metric = std::string(metric_name(task_spec(t).metric));
        r.without_adaptation = metrics[false][t];
        r.with_adaptation = metrics[true][t];
        r.reference_without = published_ablation().at(t).without_adaptation;
        r.reference_with = published_ablation().at(t).with_adaptation;
        rows.push_back(r);
    }
    std::ofstream out(dir / "ablation.csv");
    if (!out) throw Error(ErrorCode::io, "cannot write " + (dir / "ablation.csv").string());
    out << "task,metric,snr_db,without_adaptation,with_adaptation,reference_without,reference_with\n";
    for (const AblationRow& r : rows)
        out << to_string(r.task) << ',' << r.metric << ',' << fmt(cfg.eval.ablation_snr_db) << ','
            << fmt(r.without_adaptation) << ',' << fmt(r.with_adaptation) << ',' << fmt(r.reference_without) << ','
            << fmt(r.reference_with) << '\n';
    RunManifest manifest;
    manifest.command = "ablate-adaptation";
    manifest.config = config_json(cfg);
    manifest.config_hash = config_hash(cfg);
    manifest.seed = cfg.seed;
    manifest.version = version_string();
    manifest.run_id = manifest.config_hash.substr(0, 8) + "-ablation";
    manifest.started = manifest.finished = now_iso();
    manifest.artifacts["ablation_csv"] = (dir / "ablation.csv").string();
    write_manifest(manifest, dir / "manifest.json");
    return rows;
}

ParamTable parameter_table(const model::UnifiedModel& model, const std::vector<TaskId>& tasks) {
    ParamTable table;
    table.unified = model.count_parameters(std::span<const TaskId>(tasks));
    for (TaskId t : tasks) {
        ParamRow row;
        row.label = std::string(to_string(t));
        row.tdeepsc = model.count_parameters(t);
        row.udeepsc = table.unified;
        table.summed += row.tdeepsc;
        table.rows.push_back(row);
    }
    table.rows.push_back({"stored", table.summed, table.unified});
    table.reduction = table.summed > 0 ? 1.0 - static_cast<double>(table.unified) / table.summed : 0.0;
    return table;
}

ParamTable cmd_params(const std::vector<fs::path>& checkpoints, const CommandOptions& options) {
    if (checkpoints.empty()) throw Error(ErrorCode::invalid_argument, "params needs at least one checkpoint");
    std::optional<ParamTable> unified;
    std::map<std::string, long long> single;
    std::vector<TaskId> tasks;
    for (const fs::path& p : checkpoints) {
        const training::Checkpoint c = training::load_checkpoint(p);
        const ExperimentConfig cfg = parse_config(c.config_json, {}, p.string() + "#config");
        const std::unique_ptr<model::UnifiedModel> m = training::restore_model(c);
        if (c.system == "udeepsc") {
            unified = parameter_table(*m, cfg.tasks);
            tasks = cfg.tasks;
        } else {
            for (const auto& [task, value] : c.best_metrics) single[task] = m->count_parameters(task_from_string(task));
        }
    }
    if (!unified) throw Error(ErrorCode::invalid_argument, "params needs a unified (udeepsc) checkpoint");
    ParamTable table = *unified;
    table.summed = 0;
    for (ParamRow& row : table.rows) {
        if (row.label == "stored") continue;
        if (auto it = single.find(row.label); it != single.end()) row.tdeepsc = it->second;
        table.summed += row.tdeepsc;
    }
    table.rows.back().tdeepsc = table.summed;
    table.reduction = 1.0 - static_cast<double>(table.unified) / table.summed;
    if (options.out) {
        refuse_overwrite(*options.out, options.force);
        if (options.out->has_parent_path()) fs::create_directories(options.out->parent_path());
        std::ofstream out(*options.out);
        out << "task,tdeepsc,udeepsc\n";
        for (const ParamRow& r : table.rows) out << r.label << ',' << r.tdeepsc << ',' << r.udeepsc << '\n';
        out << "reduction," << fmt(table.reduction) << ",\n";
    }
    return table;
}

std::vector<fs::path> cmd_plot(const std::vector<fs::path>& csv_files, const CommandOptions& options) {
    if (csv_files.empty()) throw Error(ErrorCode::invalid_argument, "plot needs at least one CSV file");
    std::vector<ResultRow> rows;
    for (const fs::path& f : csv_files) {
        std::vector<ResultRow> part = read_results_csv(f);
        rows.insert(rows.end(), part.begin(), part.end());
    }
    const fs::path dir = options.out ? *options.out : csv_files.front().parent_path() / "plots";
    for (TaskId t : kAllTasks) refuse_overwrite(dir / (std::string(to_string(t)) + ".svg"), options.force);
    return plot_results(rows, dir);
}

} // namespace udsc::harness
