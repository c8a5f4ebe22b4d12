#include "mftsim/config.hpp"

#include <algorithm>
#include <sstream>

#include "mftsim/util.hpp"

namespace mft {

namespace {

std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::string cur;
    std::istringstream in(s);
    while (std::getline(in, cur, ',')) {
        cur = trim(cur);
        if (!cur.empty()) out.push_back(cur);
    }
    return out;
}

} // namespace

ConfigFile ConfigFile::parse_text(const std::string& text) {
    ConfigFile cfg;
    std::istringstream in(text);
    std::string line;
    std::string section;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        auto hash_pos = line.find('#');
        if (hash_pos != std::string::npos) line = line.substr(0, hash_pos);
        line = trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            require(line.back() == ']', "config line " + std::to_string(lineno) +
                                            ": unterminated section header");
            section = trim(line.substr(1, line.size() - 2));
            require(!section.empty(), "config line " + std::to_string(lineno) + ": empty section");
            cfg.sections_[section];
            continue;
        }
        auto eq = line.find('=');
        require(eq != std::string::npos,
                "config line " + std::to_string(lineno) + ": expected key = value");
        std::string key = trim(line.substr(0, eq));
        std::string value = trim(line.substr(eq + 1));
        require(!key.empty(), "config line " + std::to_string(lineno) + ": empty key");
        cfg.sections_[section][key] = value;
    }
    return cfg;
}

ConfigFile ConfigFile::parse_file(const std::string& path) {
    return parse_text(read_file(path));
}

bool ConfigFile::has(const std::string& section, const std::string& key) const {
    auto s = sections_.find(section);
    return s != sections_.end() && s->second.count(key) > 0;
}

std::string ConfigFile::get_string(const std::string& section, const std::string& key,
                                   const std::string& def) const {
    auto s = sections_.find(section);
    if (s == sections_.end()) return def;
    auto k = s->second.find(key);
    return k == s->second.end() ? def : k->second;
}

double ConfigFile::get_double(const std::string& section, const std::string& key,
                              double def) const {
    if (!has(section, key)) return def;
    return std::stod(get_string(section, key, ""));
}

int ConfigFile::get_int(const std::string& section, const std::string& key, int def) const {
    if (!has(section, key)) return def;
    return std::stoi(get_string(section, key, ""));
}

std::uint64_t ConfigFile::get_u64(const std::string& section, const std::string& key,
                                  std::uint64_t def) const {
    if (!has(section, key)) return def;
    return std::stoull(get_string(section, key, ""));
}

bool ConfigFile::get_bool(const std::string& section, const std::string& key, bool def) const {
    if (!has(section, key)) return def;
    std::string v = get_string(section, key, "");
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw ContractViolation("config: invalid boolean for " + section + "." + key + ": " + v);
}

std::vector<std::string> ConfigFile::get_list(const std::string& section, const std::string& key,
                                              const std::vector<std::string>& def) const {
    if (!has(section, key)) return def;
    return split_list(get_string(section, key, ""));
}

std::vector<std::string> ConfigFile::sections_with_prefix(const std::string& prefix) const {
    std::vector<std::string> out;
    for (const auto& [name, _] : sections_)
        if (name.rfind(prefix, 0) == 0) out.push_back(name);
    return out;
}

std::string ConfigFile::canonical() const {
    std::ostringstream out;
    for (const auto& [section, kv] : sections_)
        for (const auto& [key, value] : kv) out << section << '.' << key << '=' << value << '\n';
    return out.str();
}

std::uint64_t ConfigFile::hash() const { return fnv1a64(canonical()); }

AttackSpec default_attack_spec(const std::string& name) {
    AttackSpec spec;
    spec.name = name;
    if (name == "naive") {
        spec.objective = AttackObjective::Naive;
        spec.schedule = CosineWarmup{0.01, 0.1};
        spec.seed = 101;
    } else if (name == "sidestepper") {
        spec.objective = AttackObjective::Mixed;
        spec.lambda_h = 1.0;
        spec.lambda_c = 1.0;
        spec.schedule = CosineWarmup{0.01, 0.1};
        spec.seed = 202;
    } else if (name == "kick_settle") {
        spec.objective = AttackObjective::Naive;
        spec.schedule = KickSettle{0.01, 50.0, 0.1, 100.0};
        spec.seed = 303;
    } else {
        throw ContractViolation("unknown attack name: " + name +
                                " (expected naive, sidestepper or kick_settle)");
    }
    return spec;
}

namespace {

DefenseSpec apply_defense_overrides(DefenseSpec spec, const ConfigFile& file,
                                    const std::string& section) {
    spec.steps = file.get_int(section, "steps", spec.steps);
    spec.lr = file.get_double(section, "lr", spec.lr);
    spec.warmup_ratio = file.get_double(section, "warmup_ratio", spec.warmup_ratio);
    spec.batch_size = file.get_int(section, "batch_size", spec.batch_size);
    spec.clip_norm = file.get_double(section, "clip_norm", spec.clip_norm);
    spec.seed = file.get_u64(section, "seed", spec.seed);
    spec.hyper.sam_radius = file.get_double(section, "sam_radius", spec.hyper.sam_radius);
    spec.hyper.purge_alpha = file.get_double(section, "purge_alpha", spec.hyper.purge_alpha);
    spec.hyper.purge_beta = file.get_double(section, "purge_beta", spec.hyper.purge_beta);
    spec.hyper.lookahead_lambda =
        file.get_double(section, "lookahead_lambda", spec.hyper.lookahead_lambda);
    spec.hyper.inner_steps = file.get_int(section, "inner_steps", spec.hyper.inner_steps);
    spec.hyper.inner_lr = file.get_double(section, "inner_lr", spec.hyper.inner_lr);
    spec.hyper.couple_beta = file.get_double(section, "couple_beta", spec.hyper.couple_beta);
    spec.hyper.sdd_weight = file.get_double(section, "sdd_weight", spec.hyper.sdd_weight);
    spec.hyper.collapse_class = file.get_int(section, "collapse_class", spec.hyper.collapse_class);
    spec.hyper.hidden_layer = file.get_int(section, "hidden_layer", spec.hyper.hidden_layer);
    return spec;
}

AttackSpec apply_attack_overrides(AttackSpec spec, const ConfigFile& file,
                                  const std::string& section) {
    if (file.has(section, "objective")) {
        std::string obj = file.get_string(section, "objective", "");
        if (obj == "naive")
            spec.objective = AttackObjective::Naive;
        else if (obj == "mixed")
            spec.objective = AttackObjective::Mixed;
        else
            throw ContractViolation("config: unknown attack objective " + obj);
    }
    spec.lambda_h = file.get_double(section, "lambda_h", spec.lambda_h);
    spec.lambda_c = file.get_double(section, "lambda_c", spec.lambda_c);
    if (file.has(section, "schedule")) {
        std::string sched = file.get_string(section, "schedule", "");
        if (sched == "cosine_warmup")
            spec.schedule = CosineWarmup{};
        else if (sched == "kick_settle")
            spec.schedule = KickSettle{};
        else
            throw ContractViolation("config: unknown schedule " + sched);
    }
    if (std::holds_alternative<CosineWarmup>(spec.schedule)) {
        auto s = std::get<CosineWarmup>(spec.schedule);
        s.eta0 = file.get_double(section, "eta0", s.eta0);
        s.warmup_ratio = file.get_double(section, "warmup_ratio", s.warmup_ratio);
        spec.schedule = s;
    } else {
        auto s = std::get<KickSettle>(spec.schedule);
        s.eta0 = file.get_double(section, "eta0", s.eta0);
        s.kick_mult = file.get_double(section, "kick_mult", s.kick_mult);
        s.kick_fraction = file.get_double(section, "kick_fraction", s.kick_fraction);
        s.settle_min_div = file.get_double(section, "settle_min_div", s.settle_min_div);
        spec.schedule = s;
    }
    spec.total_steps = file.get_int(section, "total_steps", spec.total_steps);
    spec.batch_size = file.get_int(section, "batch_size", spec.batch_size);
    spec.clip_norm = file.get_double(section, "clip_norm", spec.clip_norm);
    spec.seed = file.get_u64(section, "seed", spec.seed);
    spec.log_interval = file.get_int(section, "log_interval", spec.log_interval);
    spec.param_mode.adapter = file.get_bool(section, "adapter", spec.param_mode.adapter);
    spec.param_mode.rank = file.get_int(section, "rank", spec.param_mode.rank);
    spec.param_mode.alpha = file.get_double(section, "alpha", spec.param_mode.alpha);
    return spec;
}

} // namespace

const AttackSpec* ExperimentConfig::find_attack(const std::string& name) const {
    for (const auto& a : attacks)
        if (a.name == name) return &a;
    return nullptr;
}

const DefenseSpec* ExperimentConfig::find_defense(const std::string& name) const {
    for (const auto& d : defenses)
        if (d.name == name) return &d;
    return nullptr;
}

void ExperimentConfig::validate_matrix() const {
    require(!defenses.empty(), "matrix config: need at least one defense");
    require(!attacks.empty(), "matrix config: need at least one attack");
    require(seeds.size() >= 3, "matrix config: need at least 3 seeds");
}

ExperimentConfig default_experiment_config() {
    ExperimentConfig cfg;
    cfg.bundle = BundleSpec{};
    cfg.model.layer_sizes = {16, 64, 64, cfg.bundle.total_classes()};
    cfg.model.activation = Activation::Tanh;
    cfg.model.seed = 1;
    for (const auto& inst : defense_instances()) cfg.defenses.push_back(default_defense_spec(inst.name));
    cfg.attacks = {default_attack_spec("naive"), default_attack_spec("sidestepper"),
                   default_attack_spec("kick_settle")};
    return cfg;
}

ExperimentConfig load_experiment_config(const ConfigFile& file) {
    ExperimentConfig cfg = default_experiment_config();

    cfg.bundle.n_train = file.get_int("bundle", "n_train", cfg.bundle.n_train);
    cfg.bundle.n_holdout = file.get_int("bundle", "n_holdout", cfg.bundle.n_holdout);
    cfg.bundle.feature_dim = file.get_int("bundle", "feature_dim", cfg.bundle.feature_dim);
    cfg.bundle.n_classes = file.get_int("bundle", "n_classes", cfg.bundle.n_classes);
    cfg.bundle.sigma = file.get_double("bundle", "sigma", cfg.bundle.sigma);
    cfg.bundle.center_scale = file.get_double("bundle", "center_scale", cfg.bundle.center_scale);
    cfg.bundle.seed = file.get_u64("bundle", "seed", cfg.bundle.seed);

    if (file.has("model", "layers")) {
        cfg.model.layer_sizes.clear();
        for (const auto& tok : file.get_list("model", "layers", {}))
            cfg.model.layer_sizes.push_back(std::stoi(tok));
    } else {
        cfg.model.layer_sizes.back() = cfg.bundle.total_classes();
    }
    cfg.model.activation = activation_from_string(
        file.get_string("model", "activation", to_string(cfg.model.activation)));
    cfg.model.seed = file.get_u64("model", "seed", cfg.model.seed);
    require(cfg.model.output_dim() == cfg.bundle.total_classes(),
            "config: model output classes must equal benign classes + refusal");

    cfg.align_steps = file.get_int("align", "steps", cfg.align_steps);
    cfg.align_lr = file.get_double("align", "lr", cfg.align_lr);
    cfg.align_seed = file.get_u64("align", "seed", cfg.align_seed);
    cfg.align_stop.min_refusal_rate =
        file.get_double("align", "stop_refusal_rate", cfg.align_stop.min_refusal_rate);
    cfg.align_stop.max_loss_s = file.get_double("align", "stop_loss_s", cfg.align_stop.max_loss_s);
    cfg.align_stop.max_loss_c = file.get_double("align", "stop_loss_c", cfg.align_stop.max_loss_c);
    cfg.gate.max_loss_s = file.get_double("gate", "max_loss_s", cfg.gate.max_loss_s);
    cfg.gate.max_loss_c = file.get_double("gate", "max_loss_c", cfg.gate.max_loss_c);
    cfg.gate.min_refusal_rate =
        file.get_double("gate", "min_refusal_rate", cfg.gate.min_refusal_rate);

    std::vector<std::string> defense_names;
    for (const auto& inst : defense_instances()) defense_names.push_back(inst.name);
    defense_names = file.get_list("matrix", "defenses", defense_names);
    cfg.defenses.clear();
    for (const auto& name : defense_names)
        cfg.defenses.push_back(
            apply_defense_overrides(default_defense_spec(name), file, "defense." + name));
    // shared [defense] overrides apply before per-instance sections
    if (file.has("defense", "steps") || file.has("defense", "lr") ||
        file.has("defense", "batch_size")) {
        for (auto& d : cfg.defenses) {
            d = apply_defense_overrides(std::move(d), file, "defense");
            d = apply_defense_overrides(std::move(d), file, "defense." + d.name);
        }
    }

    std::vector<std::string> attack_names = {"naive", "sidestepper", "kick_settle"};
    attack_names = file.get_list("matrix", "attacks", attack_names);
    cfg.attacks.clear();
    for (const auto& name : attack_names)
        cfg.attacks.push_back(
            apply_attack_overrides(default_attack_spec(name), file, "attack." + name));
    if (file.has("attack", "total_steps") || file.has("attack", "batch_size")) {
        for (auto& a : cfg.attacks) {
            a = apply_attack_overrides(std::move(a), file, "attack");
            a = apply_attack_overrides(std::move(a), file, "attack." + a.name);
        }
    }

    cfg.seeds.clear();
    for (const auto& tok : file.get_list("matrix", "seeds", {"0", "1", "2"}))
        cfg.seeds.push_back(std::stoull(tok));
    cfg.jobs = file.get_int("matrix", "jobs", cfg.jobs);
    cfg.cache = file.get_bool("matrix", "cache", cfg.cache);
    cfg.landscape_resolution =
        file.get_int("matrix", "landscape_resolution", cfg.landscape_resolution);

    cfg.margins.margin_h = file.get_double("eval", "margin_h", cfg.margins.margin_h);
    cfg.margins.margin_c = file.get_double("eval", "margin_c", cfg.margins.margin_c);
    cfg.severity = file.get_double("eval", "severity", cfg.severity);
    cfg.flat_threshold = file.get_double("eval", "flat_threshold", cfg.flat_threshold);

    cfg.out_dir = file.get_string("out", "dir", cfg.out_dir);
    cfg.config_hash = file.hash();
    return cfg;
}

} // namespace mft
