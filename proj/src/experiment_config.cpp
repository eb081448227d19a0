#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "selqa/format.hpp"
#include "selqa/harness.hpp"

namespace selqa {

namespace {

std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_list(std::string_view s) {
    std::vector<std::string> out;
    std::string current;
    int depth = 0;
    for (char c : s) {
        if (c == '[') ++depth;
        if (c == ']') --depth;
        if (c == ',' && depth == 0) {
            out.push_back(trim(current));
            current.clear();
        } else {
            current += c;
        }
    }
    if (!trim(current).empty() || !out.empty()) out.push_back(trim(current));
    out.erase(std::remove(out.begin(), out.end(), std::string{}), out.end());
    return out;
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value) {
    throw HarnessError("config key '" + key + "': invalid value '" + value + "'");
}

double to_double(const std::string& key, const std::string& value) {
    try {
        std::size_t used = 0;
        const double v = std::stod(value, &used);
        if (used != value.size()) bad_value(key, value);
        return v;
    } catch (const std::logic_error&) {
        bad_value(key, value);
    }
}

std::uint64_t to_uint(const std::string& key, const std::string& value) {
    if (value.empty() || value.find_first_not_of("0123456789") != std::string::npos) bad_value(key, value);
    try {
        return std::stoull(value);
    } catch (const std::logic_error&) {
        bad_value(key, value);
    }
}

bool to_bool(const std::string& key, const std::string& value) {
    if (value == "true" || value == "1") return true;
    if (value == "false" || value == "0") return false;
    bad_value(key, value);
}

std::string resolve(const std::filesystem::path& base, const std::string& value) {
    std::filesystem::path p(value);
    if (p.is_relative() && !base.empty()) p = base / p;
    return p.lexically_normal().string();
}

template <typename T>
std::string join(const std::vector<T>& xs, auto&& fmt) {
    std::string out;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        if (i) out += ',';
        out += fmt(xs[i]);
    }
    return out;
}

// Distinct values of each grid axis, in first-seen order.
template <typename T>
std::vector<T> axis(const std::vector<ForestConfig>& grid, auto&& get) {
    std::vector<T> out;
    for (const auto& c : grid) {
        T v = get(c);
        if (std::find(out.begin(), out.end(), v) == out.end()) out.push_back(v);
    }
    return out;
}

}  // namespace

std::string_view to_string(CalibratorTraining t) {
    switch (t) {
        case CalibratorTraining::none: return "none";
        case CalibratorTraining::mixed: return "source+known_ood";
        case CalibratorTraining::source_only: return "source_only";
    }
    return "?";
}

bool MethodSpec::needs_dropout() const {
    return kind == MethodKind::dropout_mean || kind == MethodKind::dropout_neg_var ||
           (kind == MethodKind::calibrator && variant == FeatureVariant::dropout);
}

std::string MethodSpec::name() const {
    std::string out(to_string(kind));
    if (kind == MethodKind::calibrator) {
        if (variant == FeatureVariant::dropout) out += "-dropout";
        if (training == CalibratorTraining::source_only) out += "-source-only";
    }
    if (trained() && !mask.empty()) out += "[" + mask.to_string() + "]";
    return out;
}

MethodSpec MethodSpec::parse(std::string_view token) {
    std::string text = trim(token);
    FeatureMask mask;
    if (const auto open = text.find('['); open != std::string::npos) {
        if (text.back() != ']') throw HarnessError("malformed method '" + text + "'");
        mask = FeatureMask::parse(std::string_view(text).substr(open + 1, text.size() - open - 2));
        text = text.substr(0, open);
    }
    MethodSpec m;
    if (text == "calibrator" || text == "calibrator-source-only" || text == "calibrator-dropout" ||
        text == "calibrator-dropout-source-only") {
        m.kind = MethodKind::calibrator;
        m.variant = text.find("dropout") != std::string::npos ? FeatureVariant::dropout : FeatureVariant::base;
        m.training = text.ends_with("source-only") ? CalibratorTraining::source_only : CalibratorTraining::mixed;
    } else if (text == "outlier") {
        m.kind = MethodKind::outlier;
        m.training = CalibratorTraining::mixed;
    } else {
        try {
            m.kind = parse_method_kind(text);
        } catch (const ConfidenceError&) {
            throw HarnessError("unknown method '" + text + "'");
        }
    }
    if (!mask.empty()) {
        if (!m.trained()) throw HarnessError("method '" + text + "' takes no feature mask");
        feature_names(m.variant, mask);  // validates the mask against the catalog
    }
    m.mask = std::move(mask);
    return m;
}

ExperimentConfig::ExperimentConfig()
    : methods{MethodSpec::parse("maxprob"), MethodSpec::parse("calibrator")}, grid(default_grid()) {}

void ExperimentConfig::validate() const {
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw HarnessError("alpha must lie in [0, 1]");
    if (calib_alpha && !(*calib_alpha >= 0.0 && *calib_alpha <= 1.0)) {
        throw HarnessError("calib_alpha must lie in [0, 1]");
    }
    if (test_n == 0) throw HarnessError("test_n must be positive");
    if (calib_per_domain == 0) throw HarnessError("calib_per_domain must be positive");
    if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw HarnessError("train_fraction must lie in (0, 1)");
    if (n_splits == 0) throw HarnessError("n_splits must be at least 1");
    if (methods.empty()) throw HarnessError("no methods configured");
    if (grid.empty()) throw HarnessError("empty hyperparameter grid");
    if (acc_levels.empty()) throw HarnessError("no accuracy levels configured");
    for (double a : acc_levels) {
        if (!(a > 0.0 && a <= 1.0)) throw HarnessError("accuracy levels must lie in (0, 1]");
    }
    if (reliability_bins == 0) throw HarnessError("reliability_bins must be positive");
}

ExperimentConfig parse_config(std::istream& in, const std::filesystem::path& base_dir) {
    ExperimentConfig cfg;
    std::vector<int> n_trees = {100, 300};
    std::vector<std::optional<int>> depths = {4, 8, std::nullopt};
    std::vector<int> leaves = {1, 5, 25};
    std::vector<std::optional<int>> mtry = {std::nullopt};
    std::vector<bool> bootstrap = {true};
    std::set<std::string> seen;

    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
        if (trim(line).empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw HarnessError("config line " + std::to_string(line_no) + ": expected key = value");
        }
        const std::string key = trim(std::string_view(line).substr(0, eq));
        const std::string value = trim(std::string_view(line).substr(eq + 1));
        if (!seen.insert(key).second) throw HarnessError("config key '" + key + "' given twice");

        if (key == "source_records") {
            cfg.source_records = resolve(base_dir, value);
        } else if (key == "source_heldout_records") {
            cfg.source_heldout_records = resolve(base_dir, value);
        } else if (key == "known_ood_records") {
            cfg.known_ood_records = resolve(base_dir, value);
        } else if (key == "unknown_ood_records") {
            cfg.unknown_ood_records = resolve(base_dir, value);
        } else if (key.starts_with("ood.") && key.size() > 4) {
            cfg.ood_records[key.substr(4)] = resolve(base_dir, value);
        } else if (key == "alpha") {
            cfg.alpha = to_double(key, value);
        } else if (key == "test_n") {
            cfg.test_n = to_uint(key, value);
        } else if (key == "calib_per_domain") {
            cfg.calib_per_domain = to_uint(key, value);
        } else if (key == "known_budget") {
            cfg.known_budget = to_uint(key, value);
        } else if (key == "calib_alpha") {
            cfg.calib_alpha = to_double(key, value);
        } else if (key == "train_fraction") {
            cfg.train_fraction = to_double(key, value);
        } else if (key == "n_splits") {
            cfg.n_splits = to_uint(key, value);
        } else if (key == "methods") {
            cfg.methods.clear();
            for (const auto& tok : split_list(value)) cfg.methods.push_back(MethodSpec::parse(tok));
        } else if (key == "grid.n_trees") {
            n_trees.clear();
            for (const auto& tok : split_list(value)) n_trees.push_back(static_cast<int>(to_uint(key, tok)));
        } else if (key == "grid.max_depth") {
            depths.clear();
            for (const auto& tok : split_list(value)) {
                depths.push_back(tok == "none" ? std::optional<int>() : static_cast<int>(to_uint(key, tok)));
            }
        } else if (key == "grid.min_samples_leaf") {
            leaves.clear();
            for (const auto& tok : split_list(value)) leaves.push_back(static_cast<int>(to_uint(key, tok)));
        } else if (key == "grid.features_per_split") {
            mtry.clear();
            for (const auto& tok : split_list(value)) {
                mtry.push_back(tok == "sqrt" ? std::optional<int>() : static_cast<int>(to_uint(key, tok)));
            }
        } else if (key == "grid.bootstrap") {
            bootstrap.clear();
            for (const auto& tok : split_list(value)) bootstrap.push_back(to_bool(key, tok));
        } else if (key == "acc_levels") {
            cfg.acc_levels.clear();
            for (const auto& tok : split_list(value)) cfg.acc_levels.push_back(to_double(key, tok));
        } else if (key == "master_seed") {
            cfg.master_seed = to_uint(key, value);
        } else if (key == "threads") {
            cfg.threads = static_cast<unsigned>(to_uint(key, value));
        } else if (key == "reliability_bins") {
            cfg.reliability_bins = to_uint(key, value);
        } else {
            throw HarnessError("config line " + std::to_string(line_no) + ": unknown key '" + key + "'");
        }
    }

    cfg.grid.clear();
    for (int t : n_trees) {
        for (const auto& d : depths) {
            for (int l : leaves) {
                for (const auto& m : mtry) {
                    for (bool b : bootstrap) {
                        ForestConfig c;
                        c.n_trees = t;
                        c.max_depth = d;
                        c.min_samples_leaf = l;
                        c.features_per_split = m;
                        c.bootstrap = b;
                        cfg.grid.push_back(c);
                    }
                }
            }
        }
    }
    cfg.validate();
    return cfg;
}

ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw HarnessError("cannot open config " + path);
    return parse_config(in, std::filesystem::path(path).parent_path());
}

std::string config_to_text(const ExperimentConfig& cfg) {
    std::ostringstream os;
    auto path_line = [&](const char* key, const std::string& v) {
        if (!v.empty()) os << key << " = " << v << '\n';
    };
    path_line("source_records", cfg.source_records);
    path_line("source_heldout_records", cfg.source_heldout_records);
    path_line("known_ood_records", cfg.known_ood_records);
    path_line("unknown_ood_records", cfg.unknown_ood_records);
    for (const auto& [name, path] : cfg.ood_records) os << "ood." << name << " = " << path << '\n';
    os << "alpha = " << format_double(cfg.alpha) << '\n';
    os << "test_n = " << cfg.test_n << '\n';
    os << "calib_per_domain = " << cfg.calib_per_domain << '\n';
    if (cfg.known_budget) os << "known_budget = " << *cfg.known_budget << '\n';
    if (cfg.calib_alpha) os << "calib_alpha = " << format_double(*cfg.calib_alpha) << '\n';
    os << "train_fraction = " << format_double(cfg.train_fraction) << '\n';
    os << "n_splits = " << cfg.n_splits << '\n';
    os << "methods = " << join(cfg.methods, [](const MethodSpec& m) { return m.name(); }) << '\n';
    os << "grid.n_trees = "
       << join(axis<int>(cfg.grid, [](const ForestConfig& c) { return c.n_trees; }),
               [](int v) { return std::to_string(v); })
       << '\n';
    os << "grid.max_depth = "
       << join(axis<std::optional<int>>(cfg.grid, [](const ForestConfig& c) { return c.max_depth; }),
               [](const std::optional<int>& v) { return v ? std::to_string(*v) : std::string("none"); })
       << '\n';
    os << "grid.min_samples_leaf = "
       << join(axis<int>(cfg.grid, [](const ForestConfig& c) { return c.min_samples_leaf; }),
               [](int v) { return std::to_string(v); })
       << '\n';
    os << "grid.features_per_split = "
       << join(axis<std::optional<int>>(cfg.grid, [](const ForestConfig& c) { return c.features_per_split; }),
               [](const std::optional<int>& v) { return v ? std::to_string(*v) : std::string("sqrt"); })
       << '\n';
    os << "grid.bootstrap = "
       << join(axis<int>(cfg.grid, [](const ForestConfig& c) { return c.bootstrap ? 1 : 0; }),
               [](int v) { return std::string(v ? "true" : "false"); })
       << '\n';
    os << "acc_levels = " << join(cfg.acc_levels, [](double v) { return format_double(v); }) << '\n';
    os << "master_seed = " << cfg.master_seed << '\n';
    os << "threads = " << cfg.threads << '\n';
    os << "reliability_bins = " << cfg.reliability_bins << '\n';
    return os.str();
}

}  // namespace selqa
