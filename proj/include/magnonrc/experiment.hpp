#pragma once

#include <atomic>
#include <cstdio>
#include <filesystem>
#include <thread>

#include <nlohmann/json.hpp>

#include "magnonrc/aor.hpp"
#include "magnonrc/data.hpp"
#include "magnonrc/psm.hpp"

namespace magnonrc {

using json = nlohmann::json;

enum class Architecture { kAor, kPsm, kPsmCascade, kReferenceDirect };
enum class ReadoutMethod { kLinear, kEnsemble, kMlp };

inline Architecture architecture_from_string(const std::string& s) {
    if (s == "aor") return Architecture::kAor;
    if (s == "psm") return Architecture::kPsm;
    if (s == "psm-cascade") return Architecture::kPsmCascade;
    if (s == "reference-direct") return Architecture::kReferenceDirect;
    throw ConfigError("unknown architecture '" + s + "'");
}

inline ReadoutMethod readout_from_string(const std::string& s) {
    if (s == "linear") return ReadoutMethod::kLinear;
    if (s == "ensemble") return ReadoutMethod::kEnsemble;
    if (s == "mlp") return ReadoutMethod::kMlp;
    throw ConfigError("unknown readout method '" + s + "'");
}

inline std::string to_string(ReadoutMethod m) {
    switch (m) {
        case ReadoutMethod::kLinear: return "linear";
        case ReadoutMethod::kEnsemble: return "ensemble";
        default: return "mlp";
    }
}

/// Fully serializable experiment description; a run is reproducible from
/// this plus the seed alone.
struct ExperimentConfig {
    Architecture architecture = Architecture::kReferenceDirect;
    json dataset;  // {"kind": ..., ...}
    Encoding encoding = Encoding::kAmplitude;
    bool ann_enabled = false;
    ReadoutMethod readout = ReadoutMethod::kLinear;
    int ensemble_chunks = 5;
    MlpSpec mlp;
    std::vector<double> splits{0.1, 0.2, 0.3, 0.4, 0.5};
    int n_trials = 100;
    uint64_t seed = 1;
    int threads = 1;
    AorConfig aor;
    PsmConfig psm;
    std::vector<uint64_t> cascade_seeds{101, 102, 103};
    std::string base_dir;  // directory dataset paths resolve against

    void validate() const {
        if (n_trials < 1) throw ConfigError("ExperimentConfig: n_trials must be >= 1");
        if (splits.empty()) throw ConfigError("ExperimentConfig: splits must be non-empty");
        for (double s : splits)
            if (s <= 0.0 || s >= 1.0)
                throw ConfigError("ExperimentConfig: splits must lie strictly in (0, 1)");
        if (dataset.is_null()) throw ConfigError("ExperimentConfig: dataset spec missing");
    }
};

namespace detail {

inline void apply_physics_overrides(const json& j, AorConfig& a, PsmConfig& p) {
    if (!j.is_object()) return;
    auto num = [&](const char* key, double& tgt) {
        if (j.contains(key)) tgt = j.at(key).get<double>();
    };
    auto inum = [&](const char* key, int& tgt) {
        if (j.contains(key)) tgt = j.at(key).get<int>();
    };
    double dt = a.dt;
    num("dt", dt);
    a.dt = dt;
    p.dt = dt;
    inum("grid_nx", a.grid_nx);
    inum("grid_ny", a.grid_ny);
    p.grid_nx = a.grid_nx;
    p.grid_ny = a.grid_ny;
    num("cell_size", a.cell_size);
    p.cell_size = a.cell_size;
    inum("absorber_cells", a.absorber_cells);
    num("absorber_alpha", a.absorber_alpha);
    p.absorber_cells = a.absorber_cells;
    p.absorber_alpha = a.absorber_alpha;
    num("base_amplitude", a.base_amplitude);
    p.base_amplitude = a.base_amplitude;
    num("drive_cap", a.drive_cap);
    p.drive_cap = a.drive_cap;
    num("relax_time", a.relax_time);
    num("relax_alpha", a.relax_alpha);
    p.relax_time = a.relax_time;
    p.relax_alpha = a.relax_alpha;
    num("ms", a.material.ms_base);
    num("a_ex", a.material.a_ex);
    num("alpha", a.material.alpha);
    num("gamma", a.material.gamma);
    p.material = a.material;
}

inline void apply_aor_overrides(const json& j, AorConfig& a) {
    if (!j.is_object()) return;
    if (j.contains("bias")) a.bias = j.at("bias").get<double>();
    if (j.contains("frequency")) a.frequency = j.at("frequency").get<double>();
    if (j.contains("interval")) a.interval = j.at("interval").get<double>();
    if (j.contains("sample_period")) a.sample_period = j.at("sample_period").get<double>();
    if (j.contains("feedback_gain")) a.feedback_gain = j.at("feedback_gain").get<double>();
    if (j.contains("feedback_delay_samples"))
        a.feedback_delay_samples = j.at("feedback_delay_samples").get<int>();
    if (j.contains("antenna_x")) a.antenna_x = j.at("antenna_x").get<int>();
    if (j.contains("antenna_width")) a.antenna_width = j.at("antenna_width").get<int>();
    if (j.contains("probe_x")) a.probe_x = j.at("probe_x").get<int>();
    if (j.contains("probe_width")) a.probe_width = j.at("probe_width").get<int>();
    if (j.contains("ann_seed")) a.ann_seed = j.at("ann_seed").get<uint64_t>();
}

inline void apply_psm_overrides(const json& j, PsmConfig& p) {
    if (!j.is_object()) return;
    if (j.contains("bias")) p.bias = j.at("bias").get<double>();
    if (j.contains("frequency")) p.frequency = j.at("frequency").get<double>();
    if (j.contains("interval")) p.interval = j.at("interval").get<double>();
    if (j.contains("sample_period")) p.sample_period = j.at("sample_period").get<double>();
    if (j.contains("output_channels")) p.output_channels = j.at("output_channels").get<int>();
    if (j.contains("spot_count")) p.spot_count = j.at("spot_count").get<int>();
    if (j.contains("spot_radius")) p.spot_radius = j.at("spot_radius").get<double>();
    if (j.contains("ms_reduction")) p.ms_reduction = j.at("ms_reduction").get<double>();
    if (j.contains("spot_region_lo")) p.spot_region_lo = j.at("spot_region_lo").get<double>();
    if (j.contains("spot_region_hi")) p.spot_region_hi = j.at("spot_region_hi").get<double>();
    if (j.contains("tail_intervals")) p.tail_intervals = j.at("tail_intervals").get<int>();
    if (j.contains("slit_length_frac")) p.slit_length_frac = j.at("slit_length_frac").get<double>();
    if (j.contains("slit_thickness")) p.slit_thickness = j.at("slit_thickness").get<int>();
    if (j.contains("antenna_x")) p.antenna_x = j.at("antenna_x").get<int>();
    if (j.contains("antenna_width")) p.antenna_width = j.at("antenna_width").get<int>();
    if (j.contains("probe_x")) p.probe_x = j.at("probe_x").get<int>();
    if (j.contains("probe_width")) p.probe_width = j.at("probe_width").get<int>();
    if (j.contains("spot_seed")) p.seed = j.at("spot_seed").get<uint64_t>();
}

}  // namespace detail

inline ExperimentConfig parse_experiment_config(const json& j, const std::string& base_dir = "") {
    ExperimentConfig cfg;
    cfg.base_dir = base_dir;
    cfg.architecture = architecture_from_string(j.value("architecture", "reference-direct"));
    if (!j.contains("dataset")) throw ConfigError("config: missing dataset section");
    cfg.dataset = j.at("dataset");
    const std::string enc = j.value("encoding", "amplitude");
    if (enc != "amplitude" && enc != "phase")
        throw ConfigError("config: unknown encoding '" + enc + "'");
    cfg.encoding = enc == "amplitude" ? Encoding::kAmplitude : Encoding::kPhase;
    cfg.ann_enabled = j.value("ann_enabled", false);
    if (j.contains("readout")) {
        const json& r = j.at("readout");
        cfg.readout = readout_from_string(r.value("method", "linear"));
        cfg.ensemble_chunks = r.value("ensemble_chunks", 5);
        if (r.contains("mlp")) {
            const json& m = r.at("mlp");
            cfg.mlp.hidden = m.value("hidden", cfg.mlp.hidden);
            cfg.mlp.epochs = m.value("epochs", cfg.mlp.epochs);
            cfg.mlp.learning_rate = m.value("learning_rate", cfg.mlp.learning_rate);
            cfg.mlp.standardize_inputs = m.value("standardize_inputs", true);
        }
    }
    if (j.contains("splits")) cfg.splits = j.at("splits").get<std::vector<double>>();
    cfg.n_trials = j.value("n_trials", 100);
    cfg.seed = j.value("seed", uint64_t{1});
    cfg.threads = j.value("threads", 1);
    cfg.aor.encoding = cfg.encoding;
    cfg.aor.ann_enabled = cfg.ann_enabled;
    detail::apply_physics_overrides(j.value("physics", json::object()), cfg.aor, cfg.psm);
    detail::apply_aor_overrides(j.value("aor", json::object()), cfg.aor);
    detail::apply_psm_overrides(j.value("psm", json::object()), cfg.psm);
    if (j.contains("cascade") && j.at("cascade").contains("stage_seeds"))
        cfg.cascade_seeds = j.at("cascade").at("stage_seeds").get<std::vector<uint64_t>>();
    cfg.validate();
    return cfg;
}

inline ExperimentConfig load_experiment_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ConfigError("config parse error in " + path + ": " + e.what());
    }
    return parse_experiment_config(j, std::filesystem::path(path).parent_path().string());
}

struct TrialRow {
    std::string method;
    std::string encoding;
    bool ann = false;
    double split = 0.0;
    int trial = 0;
    double accuracy = 0.0;
};

struct Aggregate {
    std::string method;
    double split = -1.0;  // -1 pools every split
    int n = 0;
    double max = 0.0;
    double mean = 0.0;
    double stddev = 0.0;
};

struct TrialReport {
    std::vector<TrialRow> rows;
    std::vector<Aggregate> aggregates;
};

inline Aggregate aggregate_rows(const std::vector<const TrialRow*>& rows,
                                const std::string& method, double split) {
    Aggregate a;
    a.method = method;
    a.split = split;
    a.n = static_cast<int>(rows.size());
    if (rows.empty()) return a;
    double sum = 0.0;
    for (const TrialRow* r : rows) {
        a.max = std::max(a.max, r->accuracy);
        sum += r->accuracy;
    }
    a.mean = sum / a.n;
    double ss = 0.0;
    for (const TrialRow* r : rows) ss += (r->accuracy - a.mean) * (r->accuracy - a.mean);
    a.stddev = a.n > 1 ? std::sqrt(ss / (a.n - 1)) : 0.0;
    return a;
}

inline void compute_aggregates(TrialReport& report) {
    report.aggregates.clear();
    std::vector<std::pair<std::string, double>> keys;
    for (const TrialRow& r : report.rows) {
        const std::pair<std::string, double> k{r.method, r.split};
        if (std::find(keys.begin(), keys.end(), k) == keys.end()) keys.push_back(k);
    }
    for (const auto& [method, split] : keys) {
        std::vector<const TrialRow*> rows;
        for (const TrialRow& r : report.rows)
            if (r.method == method && r.split == split) rows.push_back(&r);
        report.aggregates.push_back(aggregate_rows(rows, method, split));
    }
    std::vector<std::string> methods;
    for (const TrialRow& r : report.rows)
        if (std::find(methods.begin(), methods.end(), r.method) == methods.end())
            methods.push_back(r.method);
    for (const std::string& method : methods) {
        std::vector<const TrialRow*> rows;
        for (const TrialRow& r : report.rows)
            if (r.method == method) rows.push_back(&r);
        report.aggregates.push_back(aggregate_rows(rows, method, -1.0));
    }
}

/// Reservoir features with their labels; the unit the readout trials consume.
struct FeatureTable {
    FeatureMatrix x;
    std::vector<int> labels;
    int n_classes = 2;
    std::vector<double> interval_inputs;  // AOR only, for overlay exports
};

namespace detail {

inline void run_parallel(int n_items, int threads, const std::function<void(int)>& work) {
    threads = std::max(1, threads);
    if (threads == 1) {
        for (int i = 0; i < n_items; ++i) work(i);
        return;
    }
    std::atomic<int> next{0};
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(static_cast<size_t>(threads));
    for (int t = 0; t < threads; ++t)
        pool.emplace_back([&, t] {
            try {
                while (true) {
                    const int i = next.fetch_add(1);
                    if (i >= n_items) break;
                    work(i);
                }
            } catch (...) {
                errors[static_cast<size_t>(t)] = std::current_exception();
            }
        });
    for (std::thread& th : pool) th.join();
    for (const std::exception_ptr& e : errors)
        if (e) std::rethrow_exception(e);
}

inline std::string resolve_path(const std::string& base_dir, const std::string& path) {
    std::filesystem::path p(path);
    if (p.is_absolute() || base_dir.empty()) return path;
    const std::filesystem::path joined = std::filesystem::path(base_dir) / p;
    if (std::filesystem::exists(joined)) return joined.string();
    return path;
}

}  // namespace detail

/// Loads the dataset named by the config's dataset section.
inline SequentialDataset load_sequential_dataset(const ExperimentConfig& cfg) {
    const std::string kind = cfg.dataset.value("kind", "");
    if (kind == "stock")
        return load_stock(detail::resolve_path(cfg.base_dir, cfg.dataset.at("path")),
                          cfg.dataset.value("has_header", true));
    if (kind == "statlog")
        return load_statlog(detail::resolve_path(cfg.base_dir, cfg.dataset.at("path")),
                            cfg.dataset.value("has_header", false));
    if (kind == "iris") {
        const Dataset d =
            load_iris(detail::resolve_path(cfg.base_dir, cfg.dataset.at("path")),
                      cfg.dataset.value("classes", std::vector<std::string>{"setosa",
                                                                            "versicolor"}),
                      {cfg.dataset.value("feature_a", "petal_length"),
                       cfg.dataset.value("feature_b", "petal_width")},
                      cfg.dataset.value("has_header", true));
        SequentialDataset out;
        out.channels = 2;
        out.n_classes = d.n_classes;
        out.source = d.source;
        for (Eigen::Index r = 0; r < d.features.rows(); ++r) {
            out.samples.push_back({{d.features(r, 0), d.features(r, 1)}});
            out.labels.push_back(d.labels[static_cast<size_t>(r)]);
        }
        return out;
    }
    if (kind == "dimred") {
        const Dataset d = gen_dimred(cfg.dataset.value("seed", uint64_t{7}),
                                     cfg.dataset.value("n_samples", 60));
        SequentialDataset out;
        out.channels = 2;
        out.n_classes = d.n_classes;
        out.source = d.source;
        for (Eigen::Index r = 0; r < d.features.rows(); ++r) {
            out.samples.push_back({{d.features(r, 0), d.features(r, 1)},
                                   {d.features(r, 2), d.features(r, 3)}});
            out.labels.push_back(d.labels[static_cast<size_t>(r)]);
        }
        return out;
    }
    throw ConfigError("unknown dataset kind '" + kind + "'");
}

/// Flattened per-sample inputs, the reference-direct feature view.
inline FeatureTable direct_features(const SequentialDataset& d) {
    FeatureTable t;
    t.labels = d.labels;
    t.n_classes = d.n_classes;
    const size_t seq = d.samples.empty() ? 0 : d.samples.front().size();
    const int cols = static_cast<int>(seq) * d.channels;
    t.x.resize(static_cast<Eigen::Index>(d.samples.size()), cols);
    for (size_t r = 0; r < d.samples.size(); ++r) {
        if (d.samples[r].size() != seq)
            throw DataError("direct_features: ragged sample sequences");
        int c = 0;
        for (const auto& pair : d.samples[r])
            for (int ch = 0; ch < d.channels; ++ch)
                t.x(static_cast<Eigen::Index>(r), c++) = pair[static_cast<size_t>(ch)];
    }
    return t;
}

/// Physics-relevant subset of the config; readout and trial settings do not
/// affect reservoir features, so the cache key ignores them.
inline std::string physics_cache_key(const ExperimentConfig& cfg) {
    json j;
    switch (cfg.architecture) {
        case Architecture::kAor: j["architecture"] = "aor"; break;
        case Architecture::kPsm: j["architecture"] = "psm"; break;
        case Architecture::kPsmCascade: j["architecture"] = "psm-cascade"; break;
        case Architecture::kReferenceDirect: j["architecture"] = "reference-direct"; break;
    }
    j["dataset"] = cfg.dataset;
    if (cfg.architecture == Architecture::kAor) {
        const AorConfig& a = cfg.aor;
        j["aor"] = {{"nx", a.grid_nx},

                    {"ny", a.grid_ny},
                    {"cell", a.cell_size},
                    {"bias", a.bias},
                    {"f", a.frequency},
                    {"interval", a.interval},
                    {"sp", a.sample_period},
                    {"dt", a.dt},
                    {"absorb", a.absorber_cells},
                    {"absorb_a", a.absorber_alpha},
                    {"ax", a.antenna_x},
                    {"aw", a.antenna_width},
                    {"px", a.probe_x},
                    {"pw", a.probe_width},
                    {"amp", a.base_amplitude},
                    {"cap", a.drive_cap},
                    {"fb", a.feedback_gain},
                    {"fbd", a.feedback_delay_samples},
                    {"enc", cfg.encoding == Encoding::kAmplitude ? "amp" : "phase"},
                    {"ann", cfg.ann_enabled},
                    {"ann_seed", a.ann_seed},
                    {"ms", a.material.ms_base},
                    {"aex", a.material.a_ex},
                    {"alpha", a.material.alpha},
                    {"gamma", a.material.gamma},
                    {"relax", a.relax_time}};
    } else if (cfg.architecture != Architecture::kReferenceDirect) {
        const PsmConfig& p = cfg.psm;
        j["psm"] = {{"nx", p.grid_nx},
                    {"ny", p.grid_ny},
                    {"cell", p.cell_size},
                    {"bias", p.bias},
                    {"f", p.frequency},
                    {"interval", p.interval},
                    {"sp", p.sample_period},
                    {"dt", p.dt},
                    {"absorb", p.absorber_cells},
                    {"absorb_a", p.absorber_alpha},
                    {"ax", p.antenna_x},
                    {"aw", p.antenna_width},
                    {"px", p.probe_x},
                    {"pw", p.probe_width},
                    {"channels", p.output_channels},
                    {"amp", p.base_amplitude},
                    {"cap", p.drive_cap},
                    {"slit_len", p.slit_length_frac},
                    {"slit_th", p.slit_thickness},
                    {"spots", p.spot_count},
                    {"spot_r", p.spot_radius},
                    {"spot_red", p.ms_reduction},
                    {"spot_lo", p.spot_region_lo},
                    {"spot_hi", p.spot_region_hi},
                    {"tail", p.tail_intervals},
                    {"seed", p.seed},
                    {"ms", p.material.ms_base},
                    {"aex", p.material.a_ex},
                    {"alpha", p.material.alpha},
                    {"gamma", p.material.gamma},
                    {"relax", p.relax_time}};
        if (cfg.architecture == Architecture::kPsmCascade) j["cascade_seeds"] = cfg.cascade_seeds;
    }
    const std::string dump = j.dump();
    const uint64_t h1 = [&] {
        uint64_t h = 0xcbf29ce484222325ULL;
        for (char c : dump) h = (h ^ static_cast<unsigned char>(c)) * 0x100000001b3ULL;
        return h;
    }();
    const uint64_t h2 = splitmix64(h1);
    char buf[36];
    std::snprintf(buf, sizeof(buf), "%016llx%016llx", static_cast<unsigned long long>(h1),
                  static_cast<unsigned long long>(h2));
    return buf;
}

inline void save_feature_table(const FeatureTable& t, const std::string& key,
                               const std::string& path) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp);
        if (!out) throw IoError("cannot open " + tmp + " for writing");
        out << "# magnonrc-features key=" << key << " rows=" << t.x.rows()
            << " cols=" << t.x.cols() << " classes=" << t.n_classes
            << " overlay=" << t.interval_inputs.size() << '\n';
        out << std::setprecision(17);
        for (Eigen::Index r = 0; r < t.x.rows(); ++r) {
            out << t.labels[static_cast<size_t>(r)];
            for (Eigen::Index c = 0; c < t.x.cols(); ++c) out << ',' << t.x(r, c);
            out << '\n';
        }
        for (double v : t.interval_inputs) out << "o," << v << '\n';
    }
    std::filesystem::rename(tmp, path);
}

inline bool load_feature_table(const std::string& key, const std::string& path,
                               FeatureTable& out) {
    std::ifstream in(path);
    if (!in) return false;
    std::string header;
    if (!std::getline(in, header)) return false;
    if (header.find("key=" + key) == std::string::npos) return false;
    Eigen::Index rows = 0, cols = 0;
    int classes = 0;
    size_t overlay = 0;
    {
        std::stringstream ss(header);
        std::string tok;
        while (ss >> tok) {
            if (tok.rfind("rows=", 0) == 0) rows = std::stol(tok.substr(5));
            if (tok.rfind("cols=", 0) == 0) cols = std::stol(tok.substr(5));
            if (tok.rfind("classes=", 0) == 0) classes = std::stoi(tok.substr(8));
            if (tok.rfind("overlay=", 0) == 0) overlay = std::stoul(tok.substr(8));
        }
    }
    out.x.resize(rows, cols);
    out.labels.assign(static_cast<size_t>(rows), 0);
    out.n_classes = classes;
    out.interval_inputs.clear();
    std::string line;
    for (Eigen::Index r = 0; r < rows; ++r) {
        if (!std::getline(in, line)) return false;
        const auto cells = csv::split_line(line);
        if (static_cast<Eigen::Index>(cells.size()) != cols + 1) return false;
        out.labels[static_cast<size_t>(r)] = std::stoi(cells[0]);
        for (Eigen::Index c = 0; c < cols; ++c)
            out.x(r, c) = std::stod(cells[static_cast<size_t>(c + 1)]);
    }
    for (size_t i = 0; i < overlay; ++i) {
        if (!std::getline(in, line) || line.rfind("o,", 0) != 0) return false;
        out.interval_inputs.push_back(std::stod(line.substr(2)));
    }
    return true;
}

/// Computes (or loads from the cache) the feature table for the configured
/// architecture. Physics runs once per config; readout settings never
/// trigger a recompute.
inline FeatureTable compute_features(const ExperimentConfig& cfg,
                                     const std::string& cache_dir = "") {
    const std::string key = physics_cache_key(cfg);
    std::string cache_path;
    if (!cache_dir.empty()) {
        std::filesystem::create_directories(cache_dir);
        cache_path = (std::filesystem::path(cache_dir) / ("features_" + key + ".csv")).string();
        FeatureTable cached;
        if (load_feature_table(key, cache_path, cached)) return cached;
    }

    const SequentialDataset data = load_sequential_dataset(cfg);
    FeatureTable t;
    t.labels = data.labels;
    t.n_classes = data.n_classes;

    switch (cfg.architecture) {
        case Architecture::kReferenceDirect: {
            t = direct_features(data);
            break;
        }
        case Architecture::kAor: {
            if (data.channels != 1)
                throw ConfigError("aor architecture requires a single-channel series dataset");
            std::vector<double> inputs;
            for (const auto& s : data.samples) {
                if (s.size() != 1)
                    throw ConfigError("aor architecture expects one value per sample");
                inputs.push_back(s[0][0]);
            }
            const AnnSpec ann = AnnSpec::make(cfg.aor.ann_seed);
            const ReservoirTrace trace = run_aor(inputs, cfg.aor, ann);
            t.x = trace_features(trace);
            t.interval_inputs = inputs;
            break;
        }
        case Architecture::kPsm: {
            const PsmSystem sys = build_psm(cfg.psm);
            const int n = static_cast<int>(data.samples.size());
            // identical input sequences reuse one simulation
            std::map<std::vector<std::array<double, 2>>, int> unique_of;
            std::vector<int> slot(static_cast<size_t>(n));
            std::vector<std::vector<std::array<double, 2>>> unique_inputs;
            for (int i = 0; i < n; ++i) {
                auto [it, inserted] = unique_of.try_emplace(
                    data.samples[static_cast<size_t>(i)],
                    static_cast<int>(unique_inputs.size()));
                if (inserted) unique_inputs.push_back(data.samples[static_cast<size_t>(i)]);
                slot[static_cast<size_t>(i)] = it->second;
            }
            std::vector<Eigen::VectorXd> rows(unique_inputs.size());
            detail::run_parallel(static_cast<int>(unique_inputs.size()), cfg.threads,
                                 [&](int u) {
                                     const PsmTrace tr =
                                         run_psm(unique_inputs[static_cast<size_t>(u)], sys);
                                     rows[static_cast<size_t>(u)] = psm_features(tr);
                                 });
            if (!rows.empty()) {
                t.x.resize(n, rows.front().size());
                for (int i = 0; i < n; ++i)
                    t.x.row(i) = rows[static_cast<size_t>(slot[static_cast<size_t>(i)])]
                                     .transpose();
            }
            break;
        }
        case Architecture::kPsmCascade: {
            if (cfg.cascade_seeds.size() < 3)
                throw ConfigError("psm-cascade requires three stage seeds");
            CascadeSpec spec;
            PsmConfig base = cfg.psm;
            base.output_channels = 1;
            base.seed = cfg.cascade_seeds[0];
            spec.layer1.push_back(base);
            base.seed = cfg.cascade_seeds[1];
            spec.layer1.push_back(base);
            base.seed = cfg.cascade_seeds[2];
            spec.layer2 = base;
            const int n = static_cast<int>(data.samples.size());
            std::vector<Eigen::VectorXd> rows(static_cast<size_t>(n));
            detail::run_parallel(n, cfg.threads, [&](int i) {
                const auto& s = data.samples[static_cast<size_t>(i)];
                if (s.size() != 2)
                    throw ConfigError("psm-cascade expects two feature pairs per sample");
                Eigen::VectorXd f(4);
                f << s[0][0], s[0][1], s[1][0], s[1][1];
                rows[static_cast<size_t>(i)] = psm_features(cascade_psm(f, spec));
            });
            if (!rows.empty()) {
                t.x.resize(n, rows.front().size());
                for (int i = 0; i < n; ++i) t.x.row(i) = rows[static_cast<size_t>(i)].transpose();
            }
            break;
        }
    }

    if (!cache_path.empty()) save_feature_table(t, key, cache_path);
    return t;
}

/// Trial seed lattice: independent of execution order.
inline uint64_t trial_seed(uint64_t base_seed, double split, int trial) {
    return base_seed ^ hash_mix(double_bits(split), static_cast<uint64_t>(trial));
}

/// Seeded train/test split; exactly round(split * n) test rows.
inline void split_indices(int n, double split, uint64_t seed, std::vector<int>& train,
                          std::vector<int>& test) {
    std::vector<int> idx(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) idx[static_cast<size_t>(i)] = i;
    Rng rng(seed);
    rng.shuffle(idx);
    int n_test = static_cast<int>(std::lround(split * n));
    n_test = std::clamp(n_test, 1, n - 1);
    test.assign(idx.begin(), idx.begin() + n_test);
    train.assign(idx.begin() + n_test, idx.end());
}

inline double run_single_trial(const ExperimentConfig& cfg, const FeatureTable& t, double split,
                               int trial) {
    const uint64_t seed = trial_seed(cfg.seed, split, trial);
    std::vector<int> train, test;
    split_indices(static_cast<int>(t.x.rows()), split, seed, train, test);

    FeatureMatrix xtr(train.size(), t.x.cols()), xte(test.size(), t.x.cols());
    std::vector<int> ytr, yte;
    for (size_t i = 0; i < train.size(); ++i) {
        xtr.row(static_cast<Eigen::Index>(i)) = t.x.row(train[i]);
        ytr.push_back(t.labels[static_cast<size_t>(train[i])]);
    }
    for (size_t i = 0; i < test.size(); ++i) {
        xte.row(static_cast<Eigen::Index>(i)) = t.x.row(test[i]);
        yte.push_back(t.labels[static_cast<size_t>(test[i])]);
    }
    const TargetMatrix ttr = targets_from_labels(ytr, t.n_classes);

    switch (cfg.readout) {
        case ReadoutMethod::kLinear: return evaluate(fit_linear(xtr, ttr), xte, yte);
        case ReadoutMethod::kEnsemble: {
            const int chunks = std::min<int>(cfg.ensemble_chunks, static_cast<int>(xtr.rows()));
            return evaluate(fit_ensemble(xtr, ttr, chunks), xte, yte);
        }
        default: {
            MlpSpec spec = cfg.mlp;
            spec.task = t.n_classes <= 2 ? MlpTask::kBinary : MlpTask::kMulticlass;
            return evaluate(fit_mlp(xtr, ttr, spec, seed), xte, yte);
        }
    }
}

/// Computes reservoir features once, then runs every (split, trial) readout
/// fit and aggregates the accuracies.
inline TrialReport run_experiment(const ExperimentConfig& cfg, const std::string& cache_dir = "") {
    cfg.validate();
    const FeatureTable t = compute_features(cfg, cache_dir);
    if (t.x.rows() < 4) throw DataError("run_experiment: not enough samples");
    TrialReport report;
    const std::string enc = cfg.encoding == Encoding::kAmplitude ? "amplitude" : "phase";
    for (double split : cfg.splits)
        for (int trial = 0; trial < cfg.n_trials; ++trial)
            report.rows.push_back({to_string(cfg.readout), enc, cfg.ann_enabled, split, trial,
                                   run_single_trial(cfg, t, split, trial)});
    compute_aggregates(report);
    return report;
}

/// Per-trial CSV: (method, encoding, ann_flag, split, trial, accuracy).
inline void save_trials_csv(const TrialReport& r, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out << "method,encoding,ann_flag,split,trial,accuracy\n";
    out << std::setprecision(17);
    for (const TrialRow& row : r.rows)
        out << row.method << ',' << row.encoding << ',' << (row.ann ? 1 : 0) << ',' << row.split
            << ',' << row.trial << ',' << row.accuracy << '\n';
}

/// Aggregate CSV: (method, split, n, max, mean, std); split -1 pools all.
inline void save_aggregates_csv(const TrialReport& r, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out << "method,split,n,max,mean,std\n";
    out << std::setprecision(17);
    for (const Aggregate& a : r.aggregates)
        out << a.method << ',' << a.split << ',' << a.n << ',' << a.max << ',' << a.mean << ','
            << a.stddev << '\n';
}

inline TrialReport load_trials_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path);
    TrialReport r;
    std::string line;
    if (!std::getline(in, line)) throw DataError("load_trials_csv: empty file");
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto c = csv::split_line(line);
        if (c.size() != 6) throw DataError("load_trials_csv: expected 6 columns");
        r.rows.push_back({c[0], c[1], c[2] == "1", std::stod(c[3]), std::stoi(c[4]),
                          std::stod(c[5])});
    }
    compute_aggregates(r);
    return r;
}

/// Fig-2-style overlay: per interval the input value and the normalized
/// output RMS.
inline void save_overlay_csv(const FeatureTable& t, const std::string& path) {
    if (t.interval_inputs.empty())
        throw ConfigError("save_overlay_csv: table carries no interval inputs");
    std::ofstream out(path);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out << "interval,input,output_rms_norm\n";
    const int per = static_cast<int>(t.x.cols()) / 3;
    std::vector<double> rms(static_cast<size_t>(t.x.rows()));
    double peak = 0.0;
    for (Eigen::Index r = 0; r < t.x.rows(); ++r) {
        double s = 0.0;
        for (int j = 0; j < per; ++j) s += t.x(r, per + j) * t.x(r, per + j);
        rms[static_cast<size_t>(r)] = std::sqrt(s / per);
        peak = std::max(peak, rms[static_cast<size_t>(r)]);
    }
    out << std::setprecision(17);
    for (Eigen::Index r = 0; r < t.x.rows(); ++r)
        out << r << ',' << t.interval_inputs[static_cast<size_t>(r)] << ','
            << (peak > 0.0 ? rms[static_cast<size_t>(r)] / peak : 0.0) << '\n';
}

// ---------------------------------------------------------------------------
// Memory and parity benchmark
// ---------------------------------------------------------------------------

struct MemoryBenchRow {
    std::string task;  // "memory" or "parity"
    int delay = 0;
    double accuracy = 0.0;
    int n_test = 0;
    double p_value = 1.0;  // one-sided binomial test against chance
};

/// Exact one-sided binomial tail P(X >= k) for p0 = 0.5.
inline double binomial_tail(int k, int n) {
    if (k <= 0) return 1.0;
    double acc = 0.0;
    for (int i = k; i <= n; ++i) {
        const double logc = std::lgamma(n + 1.0) - std::lgamma(i + 1.0) -
                            std::lgamma(n - i + 1.0) - n * std::log(2.0);
        acc += std::exp(logc);
    }
    return std::min(1.0, acc);
}

/// Random binary drive; linear readout trained to recover the input j steps
/// back ("memory") and the XOR of the last j inputs ("parity").
inline std::vector<MemoryBenchRow> memory_benchmark(const AorConfig& aor, int n_intervals,
                                                    int j_max, uint64_t seed) {
    Rng rng(seed);
    std::vector<double> inputs;
    std::vector<int> bits;
    for (int i = 0; i < n_intervals; ++i) {
        const int b = static_cast<int>(rng.integer(2));
        bits.push_back(b);
        inputs.push_back(static_cast<double>(b));
    }
    const AnnSpec ann = AnnSpec::make(aor.ann_seed);
    const FeatureMatrix x = trace_features(run_aor(inputs, aor, ann));

    std::vector<MemoryBenchRow> rows;
    for (int j = 0; j <= j_max; ++j) {
        for (const bool parity : {false, true}) {
            if (parity && j < 1) continue;
            std::vector<int> labels;
            std::vector<int> keep;
            for (int i = j; i < n_intervals; ++i) {
                if (parity) {
                    int v = 0;
                    for (int l = 0; l < j; ++l) v ^= bits[static_cast<size_t>(i - l)];
                    labels.push_back(v);
                } else {
                    labels.push_back(bits[static_cast<size_t>(i - j)]);
                }
                keep.push_back(i);
            }
            FeatureMatrix xs(keep.size(), x.cols());
            for (size_t i = 0; i < keep.size(); ++i)
                xs.row(static_cast<Eigen::Index>(i)) = x.row(keep[i]);

            std::vector<int> train, test;
            split_indices(static_cast<int>(keep.size()), 0.5,
                          hash_mix(seed, static_cast<uint64_t>(j * 2 + (parity ? 1 : 0))),
                          train, test);
            FeatureMatrix xtr(train.size(), x.cols()), xte(test.size(), x.cols());
            std::vector<int> ytr, yte;
            for (size_t i = 0; i < train.size(); ++i) {
                xtr.row(static_cast<Eigen::Index>(i)) = xs.row(train[i]);
                ytr.push_back(labels[static_cast<size_t>(train[i])]);
            }
            for (size_t i = 0; i < test.size(); ++i) {
                xte.row(static_cast<Eigen::Index>(i)) = xs.row(test[i]);
                yte.push_back(labels[static_cast<size_t>(test[i])]);
            }
            const LinearModel m = fit_linear(xtr, targets_from_labels(ytr, 2));
            const double acc = evaluate(m, xte, yte);
            const int correct = static_cast<int>(std::lround(acc / 100.0 * yte.size()));
            rows.push_back({parity ? "parity" : "memory", j, acc,
                            static_cast<int>(yte.size()),
                            binomial_tail(correct, static_cast<int>(yte.size()))});
        }
    }
    return rows;
}

inline void save_memory_bench_csv(const std::vector<MemoryBenchRow>& rows,
                                  const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out << "task,delay,accuracy,n_test,p_value\n";
    out << std::setprecision(17);
    for (const MemoryBenchRow& r : rows)
        out << r.task << ',' << r.delay << ',' << r.accuracy << ',' << r.n_test << ','
            << r.p_value << '\n';
}

// ---------------------------------------------------------------------------
// Amplification-network gradient probe
// ---------------------------------------------------------------------------

struct GradientProbeResult {
    Eigen::VectorXd estimates;  // per ANN parameter
    double max_abs = 0.0;
    double base_loss = 0.0;
};

/// Forward-difference gradient of an end-to-end readout loss with respect to
/// every ANN parameter: the full simulation is re-run per shifted parameter
/// (P + 1 forward runs). The readout is fit once at the base parameters and
/// then frozen, so the probe measures the simulation path alone. Reports
/// estimates; asserts nothing.
inline GradientProbeResult ann_gradient_probe(const AorConfig& cfg, int n_intervals,
                                              uint64_t seed, double delta) {
    AorConfig aor = cfg;
    aor.ann_enabled = true;
    Rng rng(seed);
    std::vector<double> inputs;
    std::vector<int> labels;
    for (int i = 0; i < n_intervals; ++i) {
        inputs.push_back(rng.uniform());
        labels.push_back(static_cast<int>(rng.integer(2)));
    }
    const TargetMatrix y = targets_from_labels(labels, 2);
    const AnnSpec base_ann = AnnSpec::make(aor.ann_seed);

    auto features_for = [&](const AnnSpec& ann) {
        return trace_features(run_aor(inputs, aor, ann));
    };
    const FeatureMatrix x0 = features_for(base_ann);
    const LinearModel frozen = fit_linear(x0, y);

    auto loss_for = [&](const Eigen::VectorXd& params) {
        const AnnSpec ann = AnnSpec::from_params(params);
        const FeatureMatrix x = features_for(ann);
        const Eigen::MatrixXd resid = x * frozen.weights - y;
        return resid.squaredNorm() / static_cast<double>(x.rows());
    };

    GradientProbeResult out;
    out.base_loss = loss_for(base_ann.params());
    out.estimates = param_shift_grad(loss_for, base_ann.params(), delta);
    out.max_abs = out.estimates.cwiseAbs().maxCoeff();
    return out;
}

inline void save_gradient_probe_csv(const GradientProbeResult& r, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out << "param_index,layer,row,col,estimate\n";
    out << std::setprecision(17);
    const int n_w1 = AnnSpec::kHidden * AnnSpec::kInputs;
    for (Eigen::Index i = 0; i < r.estimates.size(); ++i) {
        std::string layer;
        int row = 0, col = 0;
        if (i < n_w1) {
            layer = "w1";
            row = static_cast<int>(i) / AnnSpec::kInputs;
            col = static_cast<int>(i) % AnnSpec::kInputs;
        } else if (i < n_w1 + AnnSpec::kHidden) {
            layer = "b1";
            row = static_cast<int>(i) - n_w1;
        } else if (i < n_w1 + 2 * AnnSpec::kHidden) {
            layer = "w2";
            col = static_cast<int>(i) - n_w1 - AnnSpec::kHidden;
        } else {
            layer = "b2";
        }
        out << i << ',' << layer << ',' << row << ',' << col << ',' << r.estimates(i) << '\n';
    }
}

}  // namespace magnonrc
