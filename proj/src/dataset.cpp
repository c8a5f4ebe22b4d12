#include "mftsim/dataset.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <unordered_set>

#include <json.hpp>

#include "mftsim/rng.hpp"
#include "mftsim/util.hpp"

namespace mft {

using nlohmann::json;

std::string to_string(Channel c) {
    switch (c) {
        case Channel::Benign: return "benign";
        case Channel::HarmfulComply: return "harmful_comply";
        case Channel::HarmfulRefuse: return "harmful_refuse";
        case Channel::SddDecoy: return "sdd_decoy";
    }
    return "?";
}

Channel channel_from_string(const std::string& s) {
    if (s == "benign") return Channel::Benign;
    if (s == "harmful_comply") return Channel::HarmfulComply;
    if (s == "harmful_refuse") return Channel::HarmfulRefuse;
    if (s == "sdd_decoy") return Channel::SddDecoy;
    throw ContractViolation("unknown channel: " + s);
}

void BundleSpec::validate() const {
    require(n_train > 0 && n_holdout > 0, "BundleSpec: counts must be positive");
    require(feature_dim >= 2, "BundleSpec: feature_dim must be >= 2");
    require(n_classes >= 2, "BundleSpec: need at least 2 benign classes");
    require(feature_dim - 1 >= n_classes,
            "BundleSpec: need feature_dim - 1 >= n_classes for orthogonal centers");
    require(sigma > 0.0 && center_scale > 0.0, "BundleSpec: sigma and center_scale positive");
}

namespace {

Example draw_example(const BundleSpec& spec, const std::vector<std::vector<double>>& centers,
                     Rng& rng, int cls, double flag, Channel channel, int label) {
    Example e;
    e.x.resize(static_cast<std::size_t>(spec.feature_dim));
    e.x[0] = flag;
    const auto& c = centers[static_cast<std::size_t>(cls)];
    for (int d = 0; d + 1 < spec.feature_dim; ++d)
        e.x[static_cast<std::size_t>(d + 1)] = c[static_cast<std::size_t>(d)] +
                                               spec.sigma * rng.gaussian();
    e.y = label;
    e.channel = channel;
    return e;
}

std::vector<Example> draw_split(const BundleSpec& spec,
                                const std::vector<std::vector<double>>& centers, Rng& rng, int n,
                                double flag, Channel channel, bool refusal_label) {
    std::vector<Example> out;
    out.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        int cls = i % spec.n_classes;  // balanced classes
        int label = refusal_label ? spec.refusal_class() : cls;
        out.push_back(draw_example(spec, centers, rng, cls, flag, channel, label));
    }
    return out;
}

std::string example_key(const Example& e) {
    std::string k;
    k.reserve(e.x.size() * 8);
    for (double v : e.x) {
        std::uint64_t bits;
        static_assert(sizeof(bits) == sizeof(v));
        std::memcpy(&bits, &v, sizeof(bits));
        k.append(reinterpret_cast<const char*>(&bits), sizeof(bits));
    }
    return k;
}

void check_overlap(const std::vector<Example>& a, const std::vector<Example>& b,
                   const std::string& name_a, const std::string& name_b, DisjointReport& rep) {
    std::unordered_set<std::string> seen;
    seen.reserve(a.size() * 2);
    for (const auto& e : a) seen.insert(example_key(e));
    for (std::size_t i = 0; i < b.size(); ++i) {
        if (seen.count(example_key(b[i]))) {
            rep.pass = false;
            rep.violations.push_back(name_b + "[" + std::to_string(i) + "] duplicates an input in " +
                                     name_a);
        }
    }
}

} // namespace

DatasetBundle gen_bundle(const BundleSpec& spec) {
    spec.validate();
    DatasetBundle b;
    b.spec = spec;

    // Fixed orthogonal centers: scaled standard basis directions in feature
    // space. Pairwise distance is center_scale * sqrt(2).
    b.centers.resize(static_cast<std::size_t>(spec.n_classes));
    for (int k = 0; k < spec.n_classes; ++k) {
        b.centers[static_cast<std::size_t>(k)].assign(
            static_cast<std::size_t>(spec.feature_dim - 1), 0.0);
        b.centers[static_cast<std::size_t>(k)][static_cast<std::size_t>(k)] = spec.center_scale;
    }

    Rng rng(spec.seed);
    b.d_align_safety = draw_split(spec, b.centers, rng, spec.n_train, 1.0,
                                  Channel::HarmfulRefuse, true);
    b.d_align_capability = draw_split(spec, b.centers, rng, spec.n_train, 0.0,
                                      Channel::Benign, false);
    b.d_h_attack = draw_split(spec, b.centers, rng, spec.n_train, 1.0,
                              Channel::HarmfulComply, false);
    b.d_c_retain = draw_split(spec, b.centers, rng, spec.n_train, 0.0, Channel::Benign, false);
    b.holdout_h = draw_split(spec, b.centers, rng, spec.n_holdout, 1.0,
                             Channel::HarmfulComply, false);
    b.holdout_c = draw_split(spec, b.centers, rng, spec.n_holdout, 0.0, Channel::Benign, false);
    b.d_sdd = gen_sdd_pairs(b, seed_combine(spec.seed, 0x5dd));
    return b;
}

std::vector<Example> gen_sdd_pairs(const DatasetBundle& bundle, std::uint64_t /*seed*/) {
    require(bundle.spec.n_classes >= 3,
            "gen_sdd_pairs: need >= 3 benign classes to keep decoy, true and refusal distinct");
    // Decoys sit on the harmful fine-tuning inputs themselves, so harmful
    // fitting has to overturn the decoy mapping point by point.
    std::vector<Example> out;
    out.reserve(bundle.d_h_attack.size());
    for (const auto& e : bundle.d_h_attack) {
        Example d = e;
        int true_cls = nearest_center(bundle, e.x);
        d.y = (true_cls + 1) % bundle.spec.n_classes;
        d.channel = Channel::SddDecoy;
        out.push_back(std::move(d));
    }
    return out;
}

int nearest_center(const DatasetBundle& bundle, std::span<const double> x) {
    int best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (int k = 0; k < bundle.spec.n_classes; ++k) {
        const auto& c = bundle.centers[static_cast<std::size_t>(k)];
        double d = 0.0;
        for (std::size_t i = 0; i < c.size(); ++i) {
            double diff = x[i + 1] - c[i];
            d += diff * diff;
        }
        if (d < best_d) {
            best_d = d;
            best = k;
        }
    }
    return best;
}

int oracle_predict(const DatasetBundle& bundle, std::span<const double> x) {
    if (x[0] >= 0.5) return bundle.refusal_class();
    return nearest_center(bundle, x);
}

DisjointReport verify_disjoint(const DatasetBundle& b) {
    DisjointReport rep;

    auto check_channel = [&](const std::vector<Example>& split, const std::string& name,
                             Channel want) {
        if (split.empty()) {
            rep.pass = false;
            rep.violations.push_back(name + " is empty");
            return;
        }
        for (std::size_t i = 0; i < split.size(); ++i) {
            const Example& e = split[i];
            bool harmful = e.channel != Channel::Benign;
            double flag = e.x.empty() ? -1.0 : e.x[0];
            if (e.channel != want) {
                rep.pass = false;
                rep.violations.push_back(name + "[" + std::to_string(i) + "] wrong channel");
            }
            if ((harmful && flag != 1.0) || (!harmful && flag != 0.0)) {
                rep.pass = false;
                rep.violations.push_back(name + "[" + std::to_string(i) + "] flag/channel mismatch");
            }
            if (e.channel == Channel::HarmfulRefuse && e.y != b.refusal_class()) {
                rep.pass = false;
                rep.violations.push_back(name + "[" + std::to_string(i) + "] refusal label expected");
            }
            if (e.channel == Channel::SddDecoy &&
                (e.y == b.refusal_class() || e.y == nearest_center(b, e.x))) {
                rep.pass = false;
                rep.violations.push_back(name + "[" + std::to_string(i) + "] invalid decoy label");
            }
        }
    };

    check_channel(b.d_align_safety, "d_align_safety", Channel::HarmfulRefuse);
    check_channel(b.d_align_capability, "d_align_capability", Channel::Benign);
    check_channel(b.d_h_attack, "d_h_attack", Channel::HarmfulComply);
    check_channel(b.d_c_retain, "d_c_retain", Channel::Benign);
    check_channel(b.d_sdd, "d_sdd", Channel::SddDecoy);
    check_channel(b.holdout_h, "holdout_h", Channel::HarmfulComply);
    check_channel(b.holdout_c, "holdout_c", Channel::Benign);

    check_overlap(b.d_align_safety, b.d_h_attack, "d_align_safety", "d_h_attack", rep);
    const std::vector<std::pair<const std::vector<Example>*, std::string>> train = {
        {&b.d_align_safety, "d_align_safety"},
        {&b.d_align_capability, "d_align_capability"},
        {&b.d_h_attack, "d_h_attack"},
        {&b.d_c_retain, "d_c_retain"},
        {&b.d_sdd, "d_sdd"},
    };
    for (const auto& [split, name] : train) {
        check_overlap(*split, b.holdout_h, name, "holdout_h", rep);
        check_overlap(*split, b.holdout_c, name, "holdout_c", rep);
    }
    return rep;
}

namespace {

json example_to_json(const Example& e) {
    return json{{"x", e.x}, {"y", e.y}, {"channel", to_string(e.channel)}};
}

Example example_from_json(const json& j) {
    Example e;
    e.x = j.at("x").get<std::vector<double>>();
    e.y = j.at("y").get<int>();
    e.channel = channel_from_string(j.at("channel").get<std::string>());
    return e;
}

const std::vector<std::pair<std::string, std::vector<Example> DatasetBundle::*>> kSplits = {
    {"d_align_safety", &DatasetBundle::d_align_safety},
    {"d_align_capability", &DatasetBundle::d_align_capability},
    {"d_h_attack", &DatasetBundle::d_h_attack},
    {"d_c_retain", &DatasetBundle::d_c_retain},
    {"d_sdd", &DatasetBundle::d_sdd},
    {"holdout_h", &DatasetBundle::holdout_h},
    {"holdout_c", &DatasetBundle::holdout_c},
};

} // namespace

void save_bundle(const DatasetBundle& b, const std::string& jsonl_path,
                 const std::string& manifest_path) {
    std::ostringstream lines;
    json counts = json::object();
    for (const auto& [name, member] : kSplits) {
        const auto& split = b.*member;
        counts[name] = split.size();
        for (const auto& e : split) {
            json j = example_to_json(e);
            j["split"] = name;
            lines << j.dump() << "\n";
        }
    }
    write_file(jsonl_path, lines.str());

    json manifest = {
        {"schema_version", 1},
        {"seed", b.spec.seed},
        {"counts", counts},
        {"n_train", b.spec.n_train},
        {"n_holdout", b.spec.n_holdout},
        {"feature_dim", b.spec.feature_dim},
        {"n_classes", b.spec.n_classes},
        {"sigma", b.spec.sigma},
        {"center_scale", b.spec.center_scale},
        {"centers", b.centers},
    };
    write_file(manifest_path, manifest.dump(2) + "\n");
}

DatasetBundle load_bundle(const std::string& jsonl_path, const std::string& manifest_path) {
    json manifest = json::parse(read_file(manifest_path));
    DatasetBundle b;
    b.spec.seed = manifest.at("seed").get<std::uint64_t>();
    b.spec.n_train = manifest.at("n_train").get<int>();
    b.spec.n_holdout = manifest.at("n_holdout").get<int>();
    b.spec.feature_dim = manifest.at("feature_dim").get<int>();
    b.spec.n_classes = manifest.at("n_classes").get<int>();
    b.spec.sigma = manifest.at("sigma").get<double>();
    b.spec.center_scale = manifest.at("center_scale").get<double>();
    b.centers = manifest.at("centers").get<std::vector<std::vector<double>>>();

    std::istringstream in(read_file(jsonl_path));
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        json j = json::parse(line);
        Example e = example_from_json(j);
        std::string split = j.at("split").get<std::string>();
        bool placed = false;
        for (const auto& [name, member] : kSplits)
            if (name == split) {
                (b.*member).push_back(std::move(e));
                placed = true;
                break;
            }
        require(placed, "load_bundle: unknown split " + split);
    }
    return b;
}

std::uint64_t bundle_hash(const DatasetBundle& b) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& [name, member] : kSplits) {
        h = fnv1a64(name, h);
        for (const auto& e : b.*member) {
            h = fnv1a64(e.x.data(), e.x.size() * sizeof(double), h);
            h = fnv1a64(&e.y, sizeof(e.y), h);
        }
    }
    return h;
}

} // namespace mft
