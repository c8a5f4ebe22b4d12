#include <doctest.h>

#include <set>

#include "mftsim/dataset.hpp"
#include "mftsim/util.hpp"

using namespace mft;

namespace {

BundleSpec small_spec() {
    BundleSpec spec;
    spec.n_train = 100;
    spec.n_holdout = 60;
    spec.seed = 5;
    return spec;
}

} // namespace

TEST_CASE("gen_bundle: deterministic in the seed") {
    DatasetBundle a = gen_bundle(small_spec());
    DatasetBundle b = gen_bundle(small_spec());
    CHECK(bundle_hash(a) == bundle_hash(b));
    BundleSpec other = small_spec();
    other.seed = 6;
    CHECK(bundle_hash(a) != bundle_hash(gen_bundle(other)));
}

TEST_CASE("gen_bundle: channel, flag and label invariants hold exhaustively") {
    DatasetBundle b = gen_bundle(small_spec());
    for (const auto& e : b.d_align_safety) {
        CHECK(e.channel == Channel::HarmfulRefuse);
        CHECK(e.x[0] == 1.0);
        CHECK(e.y == b.refusal_class());
    }
    for (const auto& e : b.d_align_capability) {
        CHECK(e.channel == Channel::Benign);
        CHECK(e.x[0] == 0.0);
        CHECK(e.y < b.spec.n_classes);
    }
    for (const auto& e : b.d_h_attack) {
        CHECK(e.channel == Channel::HarmfulComply);
        CHECK(e.x[0] == 1.0);
        CHECK(e.y < b.spec.n_classes);  // the forbidden true task label
    }
    for (const auto& e : b.d_sdd) {
        CHECK(e.channel == Channel::SddDecoy);
        CHECK(e.x[0] == 1.0);
        CHECK(e.y != b.refusal_class());
    }
    DisjointReport rep = verify_disjoint(b);
    CHECK(rep.pass);
    CHECK(rep.violations.empty());
}

TEST_CASE("gen_bundle: counts of zero rejected") {
    BundleSpec bad = small_spec();
    bad.n_train = 0;
    CHECK_THROWS_AS((void)gen_bundle(bad), ContractViolation);
}

TEST_CASE("gen_bundle: nearest-center oracle reaches 95% benign accuracy") {
    DatasetBundle b = gen_bundle(BundleSpec{});  // default desk-scale bundle
    int correct = 0;
    for (const auto& e : b.holdout_c)
        if (oracle_predict(b, e.x) == e.y) ++correct;
    double acc = static_cast<double>(correct) / static_cast<double>(b.holdout_c.size());
    CHECK(acc >= 0.95);
}

TEST_CASE("oracle classifier: refusal on every harmful input, zero compliance") {
    DatasetBundle b = gen_bundle(BundleSpec{});
    for (const auto& e : b.holdout_h) CHECK(oracle_predict(b, e.x) == b.refusal_class());
    for (const auto& e : b.d_h_attack) CHECK(oracle_predict(b, e.x) != e.y);
}

TEST_CASE("gen_sdd_pairs: decoy labels avoid both the true label and refusal") {
    DatasetBundle b = gen_bundle(small_spec());
    auto pairs = gen_sdd_pairs(b, 123);
    REQUIRE(pairs.size() == b.d_h_attack.size());
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        int truth = nearest_center(b, pairs[i].x);
        CHECK(pairs[i].y != truth);
        CHECK(pairs[i].y != b.refusal_class());
        CHECK(pairs[i].channel == Channel::SddDecoy);
    }
}

TEST_CASE("gen_sdd_pairs: the decoy map is a bijection on benign labels") {
    DatasetBundle b = gen_bundle(small_spec());
    // decoy(k) = (k+1) mod n_classes, checked exhaustively over classes
    std::set<int> images;
    for (int k = 0; k < b.spec.n_classes; ++k) images.insert((k + 1) % b.spec.n_classes);
    CHECK(images.size() == static_cast<std::size_t>(b.spec.n_classes));
    for (int k = 0; k < b.spec.n_classes; ++k) CHECK((k + 1) % b.spec.n_classes != k);
}

TEST_CASE("gen_sdd_pairs: fewer than 3 benign classes rejected") {
    BundleSpec spec = small_spec();
    spec.n_classes = 2;
    DatasetBundle b;
    b.spec = spec;
    b.centers = {{1.0, 0.0}, {0.0, 1.0}};
    Example e;
    e.x = {1.0, 0.5, 0.5};
    e.channel = Channel::HarmfulComply;
    b.d_h_attack = {e};
    CHECK_THROWS_AS((void)gen_sdd_pairs(b, 7), ContractViolation);
}

TEST_CASE("verify_disjoint: injected duplicate is caught") {
    DatasetBundle b = gen_bundle(small_spec());
    b.d_align_safety.push_back(b.d_h_attack[0]);
    b.d_align_safety.back().channel = Channel::HarmfulRefuse;
    b.d_align_safety.back().y = b.refusal_class();
    DisjointReport rep = verify_disjoint(b);
    CHECK_FALSE(rep.pass);
    CHECK(rep.violations.size() == 1);
}

TEST_CASE("verify_disjoint: agrees with a brute-force pairwise comparison") {
    BundleSpec spec = small_spec();
    spec.n_train = 100;
    DatasetBundle b = gen_bundle(spec);
    // O(n^2) oracle over the attacked/safety pair
    int collisions = 0;
    for (const auto& a : b.d_align_safety)
        for (const auto& h : b.d_h_attack)
            if (a.x == h.x) ++collisions;
    CHECK(collisions == 0);
    CHECK(verify_disjoint(b).pass);
}

TEST_CASE("bundle: JSONL round-trip preserves every example") {
    DatasetBundle b = gen_bundle(small_spec());
    std::string dir = "/tmp/mftsim_test_bundle";
    save_bundle(b, dir + "/bundle.jsonl", dir + "/manifest.json");
    DatasetBundle r = load_bundle(dir + "/bundle.jsonl", dir + "/manifest.json");
    CHECK(bundle_hash(b) == bundle_hash(r));
    CHECK(r.spec.n_classes == b.spec.n_classes);
    CHECK(r.centers == b.centers);
    REQUIRE(r.d_sdd.size() == b.d_sdd.size());
    for (std::size_t i = 0; i < b.d_sdd.size(); ++i) {
        CHECK(r.d_sdd[i].x == b.d_sdd[i].x);
        CHECK(r.d_sdd[i].y == b.d_sdd[i].y);
        CHECK(r.d_sdd[i].channel == b.d_sdd[i].channel);
    }
}
