#include <doctest.h>

#include <cstring>
#include <fstream>
#include <sstream>
#include <string>

#include "json.hpp"
#include "deepcoder/dataio.hpp"
#include "deepcoder/errors.hpp"
#include "small_setup.hpp"
#include "support.hpp"

using namespace deepcoder;
using deepcoder::test::TempDir;

namespace {

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

void spit(const std::filesystem::path& p, const std::string& s) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    out << s;
}

void replace_once(std::string& s, const std::string& from, const std::string& to) {
    const auto at = s.find(from);
    REQUIRE(at != std::string::npos);
    s.replace(at, from.size(), to);
}

Dataset two_image_dataset() {
    Dataset d;
    d.images = Tensor({2, 1, 2, 2}, {0.0, 0.25, 0.5, 1.0, 0.125, 0.75, 0.375, 0.0625});
    d.labels = LabelMatrix(2, 2);
    d.labels.at(0, 0) = 1;
    d.labels.at(0, 1) = 3;
    d.labels.at(1, 0) = 2;
    d.labels.at(1, 1) = 1;
    d.subjects = {0, 1};
    d.levels = {2, 3};
    return d;
}

std::string message_of(const std::function<void()>& f) {
    try {
        f();
    } catch (const std::exception& e) {
        return e.what();
    }
    return {};
}

}  // namespace

TEST_CASE("noise-free minimum-level render with zero offset") {
    dataio::SyntheticSpec s;
    s.noise = 0.0;
    s.offset_scale = 0.0;
    const Tensor img = dataio::render_sample(s, 0, std::vector<int>(s.outputs, 1));
    // Corner pixels sit far from every blob site: background only.
    CHECK(img.at(0, 0, 0, 0) < 1e-6);
    CHECK(img.at(0, 0, 31, 31) < 1e-6);
    dataio::SyntheticSpec s6 = s;
    s6.height = s6.width = 64;
    const double side = 64.0, radius = 0.3 * side, c = 31.5;
    const double amp = s.blob_gain * 1.0 / s.levels;
    const Tensor big = dataio::render_sample(s6, 0, std::vector<int>(s6.outputs, 1));
    // Site of output 0 is straight above the centre; the nearest pixel rows bracket it.
    const auto row = static_cast<std::size_t>(std::lround(c - radius));
    CHECK(big.at(0, 0, row, 31) <= amp + 1e-6);
    CHECK(big.at(0, 0, row, 31) > 0.9 * amp);
}

TEST_CASE("blob-centre pixel increases strictly with its level") {
    dataio::SyntheticSpec s;
    s.levels = 6;
    const double radius = 0.3 * 32.0, c = 15.5;
    const auto row = static_cast<std::size_t>(std::lround(c - radius));
    for (int subj = 0; subj < 3; ++subj) {
        double prev = -1.0;
        for (int l = 1; l <= 6; ++l) {
            const Tensor img = dataio::render_sample(s, subj, {l, 2, 3});
            CHECK(img.at(0, 0, row, 16) > prev);
            prev = img.at(0, 0, row, 16);
        }
    }
}

TEST_CASE("generator is deterministic and respects its invariants") {
    dataio::SyntheticSpec s;
    s.samples = 100;
    const Dataset a = dataio::generate_synthetic(s), b = dataio::generate_synthetic(s);
    CHECK(a == b);
    CHECK_NOTHROW(a.validate());
    CHECK(a.images.shape() == Shape{100, 1, 32, 32});
    for (double v : a.images.raw()) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }
    s.seed = 1;
    CHECK_FALSE(dataio::generate_synthetic(s) == a);
    CHECK(dataio::generate_synthetic({}).size() == 1200);
    dataio::SyntheticSpec bad;
    bad.levels = 1;
    CHECK_THROWS_AS(dataio::generate_synthetic(bad), std::invalid_argument);
}

TEST_CASE("label marginals are near uniform") {
    for (std::uint64_t seed : {0u, 1u, 2u}) {
        dataio::SyntheticSpec s;
        s.samples = 2000;
        s.height = s.width = 8;
        s.seed = seed;
        const Dataset d = dataio::generate_synthetic(s);
        for (std::size_t q = 0; q < s.outputs; ++q) {
            std::vector<double> freq(s.levels, 0.0);
            for (int y : d.labels.column(q)) freq[y - 1] += 1.0 / s.samples;
            for (double f : freq) CHECK(std::abs(f - 1.0 / s.levels) < 0.05);
        }
    }
}

TEST_CASE("dataset save and load round trip is bit exact") {
    TempDir dir("dataio_rt");
    dataio::SyntheticSpec s;
    s.samples = 40;
    const Dataset d = dataio::generate_synthetic(s);
    dataio::save_dataset(d, dir / "set.json");
    CHECK(dataio::load_dataset(dir / "set.json") == d);
}

TEST_CASE("hand-built two-image dataset matches the byte layout") {
    TempDir dir("dataio_bytes");
    dataio::save_dataset(two_image_dataset(), dir / "tiny.json");
    const std::string img = slurp(dir / "tiny.images.f32");
    REQUIRE(img.size() == 8 * 4);
    const float expect[8] = {0.0f, 0.25f, 0.5f, 1.0f, 0.125f, 0.75f, 0.375f, 0.0625f};
    for (int i = 0; i < 8; ++i) {
        std::uint32_t bits;
        std::memcpy(&bits, &expect[i], 4);
        for (int b = 0; b < 4; ++b)
            CHECK(static_cast<unsigned char>(img[i * 4 + b]) == ((bits >> (8 * b)) & 0xffu));
    }
    CHECK(slurp(dir / "tiny.labels.csv") == "index,subject,au_1,au_2\n0,0,1,3\n1,1,2,1\n");
    const auto m = nlohmann::json::parse(slurp(dir / "tiny.json"));
    CHECK(m["format"] == "deepcoder-dataset");
    CHECK(m["version"] == 1);
    CHECK(m["samples"] == 2);
    CHECK(m["channels"] == 1);
    CHECK(m["height"] == 2);
    CHECK(m["width"] == 2);
    CHECK(m["outputs"] == 2);
    CHECK(m["levels"] == nlohmann::json::array({2, 3}));
    CHECK(m["images"] == "tiny.images.f32");
    CHECK(m["labels"] == "tiny.labels.csv");
    CHECK(dataio::load_dataset(dir / "tiny.json") == two_image_dataset());
}

TEST_CASE("corrupted dataset files are rejected naming the field") {
    TempDir dir("dataio_bad");
    const auto man = dir / "tiny.json";
    const auto save = [&] { dataio::save_dataset(two_image_dataset(), man); };

    save();
    std::string m = slurp(man);
    replace_once(m, "deepcoder-dataset", "something-else");
    spit(man, m);
    CHECK(message_of([&] { dataio::load_dataset(man); }).find("manifest.format") != std::string::npos);
    CHECK_THROWS_AS(dataio::load_dataset(man), FormatError);

    save();
    m = slurp(man);
    replace_once(m, "\"version\": 1", "\"version\": 7");
    spit(man, m);
    CHECK(message_of([&] { dataio::load_dataset(man); }).find("manifest.version") != std::string::npos);

    save();
    std::string img = slurp(dir / "tiny.images.f32");
    spit(dir / "tiny.images.f32", img.substr(0, img.size() - 3));
    CHECK(message_of([&] { dataio::load_dataset(man); }).find("images") != std::string::npos);
    CHECK_THROWS_AS(dataio::load_dataset(man), FormatError);

    save();
    spit(dir / "tiny.labels.csv", "index,subject,au_1,au_2\n0,0,1,3\n1,1,2,4\n");
    CHECK(message_of([&] { dataio::load_dataset(man); }).find("au_2") != std::string::npos);
    CHECK_THROWS_AS(dataio::load_dataset(man), FormatError);

    save();
    spit(dir / "tiny.labels.csv", "index,subject,au_1,au_2\n0,0,1,3\n");
    CHECK(message_of([&] { dataio::load_dataset(man); }).find("truncated") != std::string::npos);

    CHECK_THROWS_AS(dataio::load_dataset(dir / "missing.json"), FormatError);
}

TEST_CASE("empty config yields the documented defaults") {
    const dataio::Config c = dataio::parse_config_string("{}");
    CHECK(c.synth.samples == 1200);
    CHECK(c.synth.outputs == 3);
    CHECK(c.synth.levels == 4);
    CHECK(c.synth.subjects == 8);
    CHECK(c.synth.noise == 0.05);
    CHECK(c.synth.height == 32);
    CHECK(c.train.n_l == 400);
    CHECK(c.train.warm_start_epochs == 5);
    CHECK(c.train.max_epochs == 100);
    CHECK(c.train.n_t_alpha == 10);
    CHECK(c.train.n_t_beta == 10);
    CHECK(c.train.patience == 5);
    CHECK(c.train.tolerance == 1e-4);
    CHECK(c.train.arch == vcae::Architecture::desk_default());
    CHECK(c.train.gp_init.latent_dim == 50);
    CHECK(c == dataio::Config{});
}

TEST_CASE("config errors name the key path") {
    const auto key_of = [](const std::string& text) {
        try {
            dataio::parse_config_string(text);
        } catch (const ConfigError& e) {
            return e.key_path();
        }
        return std::string("<no error>");
    };
    CHECK(key_of(R"({"train": {"lr": 0.01, "bogus": 1}})") == "train.bogus");
    CHECK(key_of(R"({"colour": 1})") == "colour");
    CHECK(key_of(R"({"train": {"lr": 1.2.3}})") == "train.lr");
    CHECK(key_of(R"({"train": {"max_epochs": "ten"}})") == "train.max_epochs");
    CHECK(key_of(R"({"model": {"conv_stages": [{"kernel": 3}]}})") == "model.conv_stages[0].filters");
    CHECK(key_of(R"({"train": {"momentum": 1.5}})") == "train.momentum");
}

TEST_CASE("config document round trips") {
    dataio::Config c = test::small_config();
    c.train.seed = 77;
    c.train.lr = 0.0123;
    c.synth.noise = 0.2;
    CHECK(dataio::parse_config_string(dataio::config_to_string(c)) == c);
    TempDir dir("dataio_cfg");
    spit(dir / "c.json", dataio::config_to_string(c));
    CHECK(dataio::parse_config(dir / "c.json") == c);
}

TEST_CASE("checkpoint round trip restores the full state") {
    const auto cfg = test::small_config();
    const Dataset d = dataio::generate_synthetic(cfg.synth);
    auto st = trainer::train_joint(d, cfg.train);
    TempDir dir("dataio_ckpt");
    dataio::save_checkpoint(st, dir / "m.ckpt");
    const auto back = dataio::load_checkpoint(dir / "m.ckpt");
    CHECK(test::same_state(st, back));
    CHECK(slurp(dir / "m.ckpt").substr(0, 4) == "DC2C");

    std::string bytes = slurp(dir / "m.ckpt");
    bytes[0] = 'X';
    spit(dir / "bad.ckpt", bytes);
    CHECK_THROWS_AS(dataio::load_checkpoint(dir / "bad.ckpt"), FormatError);
    bytes = slurp(dir / "m.ckpt");
    spit(dir / "short.ckpt", bytes.substr(0, bytes.size() - 9));
    CHECK_THROWS_AS(dataio::load_checkpoint(dir / "short.ckpt"), FormatError);
}

TEST_CASE("metrics csv rows recombine to L_DC") {
    const auto cfg = test::small_config();
    const auto st = trainer::train_joint(dataio::generate_synthetic(cfg.synth), cfg.train);
    CHECK(dataio::metrics_csv_header() ==
          "epoch,L_kl_X,L_r_X,L_p_X,L_kl_Z0,L_r_Z0,L_o_Z0,L_DC,alpha,beta,wall_seconds");
    for (const auto& r : st.history) {
        std::istringstream is(dataio::metrics_csv_row(r));
        std::vector<double> v;
        std::string cell;
        while (std::getline(is, cell, ',')) v.push_back(std::stod(cell));
        REQUIRE(v.size() == 11);
        CHECK(v[0] == r.epoch);
        CHECK(v[7] == r.l_dc);
        // Terms are logged unweighted; alpha and beta are the warm-up weights of that epoch.
        const double a = v[8], b = v[9];
        CHECK(v[7] == doctest::Approx(a * v[1] + v[2] + (1 - a) * v[3] + b * v[4] + v[5] + v[6]).epsilon(1e-12));
    }
}
