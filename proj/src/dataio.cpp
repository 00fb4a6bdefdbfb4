#include "deepcoder/dataio.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include "json.hpp"
#include "deepcoder/errors.hpp"

namespace deepcoder::dataio {

using nlohmann::json;
namespace fs = std::filesystem;

static_assert(std::endian::native == std::endian::little, "payload I/O assumes a little-endian host");

// ---------------------------------------------------------------------------
// Synthetic data

void SyntheticSpec::validate() const {
    if (height < 4 || width < 4) throw std::invalid_argument("synthetic: image must be at least 4x4");
    if (outputs == 0) throw std::invalid_argument("synthetic: outputs must be positive");
    if (levels < 2) throw std::invalid_argument("synthetic: levels must be at least 2");
    if (subjects == 0) throw std::invalid_argument("synthetic: subjects must be positive");
    if (samples < subjects) throw std::invalid_argument("synthetic: need at least one sample per subject");
    if (!(blob_gain > 0.0)) throw std::invalid_argument("synthetic: blob_gain must be positive");
    if (!(blob_sigma > 0.0)) throw std::invalid_argument("synthetic: blob_sigma must be positive");
    if (!(offset_scale >= 0.0)) throw std::invalid_argument("synthetic: offset_scale must be non-negative");
    if (!(noise >= 0.0)) throw std::invalid_argument("synthetic: noise must be non-negative");
}

namespace {

struct Appearance {
    double a, b, c;  // level, vertical and horizontal slope of the background
};

std::vector<Appearance> subject_appearance(const SyntheticSpec& spec) {
    Rng rng(spec.subject_seed);
    std::vector<Appearance> out(spec.subjects);
    for (auto& s : out) {
        s.a = rng.uniform();
        s.b = rng.uniform() - 0.5;
        s.c = rng.uniform() - 0.5;
    }
    return out;
}

void render_into(const SyntheticSpec& spec, const Appearance& app, const std::vector<int>& levels, double* img) {
    const double h = static_cast<double>(spec.height), w = static_cast<double>(spec.width);
    const double side = std::min(h, w);
    const double radius = 0.3 * side, sigma = spec.blob_sigma * side;
    const double ch = 0.5 * (h - 1.0), cw = 0.5 * (w - 1.0);
    const std::size_t q_count = spec.outputs;
    std::vector<double> cy(q_count), cx(q_count), amp(q_count);
    for (std::size_t q = 0; q < q_count; ++q) {
        const double angle = 2.0 * std::numbers::pi * static_cast<double>(q) / static_cast<double>(q_count) -
                             0.5 * std::numbers::pi;
        cy[q] = ch + radius * std::sin(angle);
        cx[q] = cw + radius * std::cos(angle);
        amp[q] = spec.blob_gain * static_cast<double>(levels[q]) / static_cast<double>(spec.levels);
    }
    for (std::size_t i = 0; i < spec.height; ++i)
        for (std::size_t j = 0; j < spec.width; ++j) {
            const double u = 2.0 * static_cast<double>(i) / (h - 1.0) - 1.0;
            const double v = 2.0 * static_cast<double>(j) / (w - 1.0) - 1.0;
            double val = spec.offset_scale * (app.a + app.b * u + app.c * v);
            for (std::size_t q = 0; q < q_count; ++q) {
                const double dy = static_cast<double>(i) - cy[q], dx = static_cast<double>(j) - cx[q];
                val += amp[q] * std::exp(-0.5 * (dy * dy + dx * dx) / (sigma * sigma));
            }
            img[i * spec.width + j] = val;
        }
}

double clamp_f32(double v) { return static_cast<double>(static_cast<float>(std::clamp(v, 0.0, 1.0))); }

}  // namespace

Tensor render_sample(const SyntheticSpec& spec, int subject, const std::vector<int>& levels) {
    spec.validate();
    if (subject < 0 || static_cast<std::size_t>(subject) >= spec.subjects)
        throw std::invalid_argument("render_sample: subject out of range");
    if (levels.size() != spec.outputs) throw std::invalid_argument("render_sample: wrong number of levels");
    Tensor img({1, 1, spec.height, spec.width});
    render_into(spec, subject_appearance(spec)[static_cast<std::size_t>(subject)], levels, img.data());
    for (double& v : img.raw()) v = clamp_f32(v);
    return img;
}

Dataset generate_synthetic(const SyntheticSpec& spec) {
    spec.validate();
    const auto app = subject_appearance(spec);
    const std::size_t n = spec.samples, px = spec.height * spec.width;
    Rng rng(spec.seed);
    Dataset d;
    d.levels.assign(spec.outputs, spec.levels);
    d.subjects.resize(n);
    for (std::size_t i = 0; i < n; ++i) d.subjects[i] = static_cast<int>(i % spec.subjects);
    rng.shuffle(d.subjects.begin(), d.subjects.end());
    d.labels = LabelMatrix(n, spec.outputs);
    d.images = Tensor({n, 1, spec.height, spec.width});
    std::vector<int> lv(spec.outputs);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t q = 0; q < spec.outputs; ++q) {
            lv[q] = 1 + static_cast<int>(rng.uniform_index(static_cast<std::size_t>(spec.levels)));
            d.labels.at(i, q) = lv[q];
        }
        double* img = d.images.data() + i * px;
        render_into(spec, app[static_cast<std::size_t>(d.subjects[i])], lv, img);
        for (std::size_t k = 0; k < px; ++k) img[k] = clamp_f32(img[k] + spec.noise * rng.normal());
    }
    return d;
}

// ---------------------------------------------------------------------------
// Dataset files

namespace {

fs::path payload_path(const fs::path& manifest, const char* suffix) {
    fs::path p = manifest;
    p.replace_extension();
    p += suffix;
    return p;
}

std::string read_text(const fs::path& path, const char* what) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError(std::string(what) + ": cannot open " + path.string());
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

void write_bytes(const fs::path& path, const void* data, std::size_t n) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
    if (!out) throw std::runtime_error("write failed: " + path.string());
}

template <class T>
T field(const json& j, const char* key, const char* where) {
    if (!j.contains(key)) throw FormatError(std::string(where) + "." + key + ": missing");
    try {
        return j.at(key).get<T>();
    } catch (const json::exception&) {
        throw FormatError(std::string(where) + "." + key + ": wrong type");
    }
}

}  // namespace

void save_dataset(const Dataset& data, const fs::path& manifest) {
    data.validate();
    const fs::path img_path = payload_path(manifest, ".images.f32");
    const fs::path lab_path = payload_path(manifest, ".labels.csv");
    json m;
    m["format"] = kDatasetFormat;
    m["version"] = kDatasetVersion;
    m["samples"] = data.size();
    m["channels"] = data.images.dim(1);
    m["height"] = data.images.dim(2);
    m["width"] = data.images.dim(3);
    m["outputs"] = data.outputs();
    m["levels"] = data.levels;
    m["images"] = img_path.filename().string();
    m["labels"] = lab_path.filename().string();
    const std::string text = m.dump(2) + "\n";
    write_bytes(manifest, text.data(), text.size());

    std::vector<float> px(data.images.size());
    std::transform(data.images.raw().begin(), data.images.raw().end(), px.begin(),
                   [](double v) { return static_cast<float>(v); });
    write_bytes(img_path, px.data(), px.size() * sizeof(float));

    std::ostringstream csv;
    csv << "index,subject";
    for (std::size_t q = 0; q < data.outputs(); ++q) csv << ",au_" << q + 1;
    csv << "\n";
    for (std::size_t i = 0; i < data.size(); ++i) {
        csv << i << "," << data.subjects[i];
        for (std::size_t q = 0; q < data.outputs(); ++q) csv << "," << data.labels.at(i, q);
        csv << "\n";
    }
    const std::string s = csv.str();
    write_bytes(lab_path, s.data(), s.size());
}

namespace {

long parse_int(const std::string& cell, const std::string& where) {
    if (cell.empty()) throw FormatError(where + ": empty cell");
    std::size_t used = 0;
    long v = 0;
    try {
        v = std::stol(cell, &used);
    } catch (const std::exception&) {
        throw FormatError(where + ": not an integer: '" + cell + "'");
    }
    if (used != cell.size()) throw FormatError(where + ": not an integer: '" + cell + "'");
    return v;
}

std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream is(line);
    while (std::getline(is, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    return cells;
}

}  // namespace

Dataset load_dataset(const fs::path& manifest) {
    json m;
    try {
        m = json::parse(read_text(manifest, "manifest"));
    } catch (const json::parse_error& e) {
        throw FormatError(std::string("manifest: malformed JSON: ") + e.what());
    }
    if (!m.is_object()) throw FormatError("manifest: not an object");
    if (field<std::string>(m, "format", "manifest") != kDatasetFormat) throw FormatError("manifest.format: not a dataset manifest");
    const int version = field<int>(m, "version", "manifest");
    if (version != kDatasetVersion)
        throw FormatError("manifest.version: unsupported version " + std::to_string(version));
    const auto n = field<std::size_t>(m, "samples", "manifest");
    const auto c = field<std::size_t>(m, "channels", "manifest");
    const auto h = field<std::size_t>(m, "height", "manifest");
    const auto w = field<std::size_t>(m, "width", "manifest");
    const auto q = field<std::size_t>(m, "outputs", "manifest");
    const auto levels = field<std::vector<int>>(m, "levels", "manifest");
    if (n == 0 || c == 0 || h == 0 || w == 0 || q == 0) throw FormatError("manifest: dimensions must be positive");
    if (levels.size() != q) throw FormatError("manifest.levels: expected " + std::to_string(q) + " entries");
    for (int l : levels)
        if (l < 2) throw FormatError("manifest.levels: every output needs at least 2 levels");
    const fs::path dir = manifest.parent_path();
    const fs::path img_path = dir / field<std::string>(m, "images", "manifest");
    const fs::path lab_path = dir / field<std::string>(m, "labels", "manifest");

    Dataset d;
    d.levels = levels;
    const std::size_t count = n * c * h * w;
    if (count / n / c / h != w) throw FormatError("manifest: dimensions overflow");
    {
        const std::string bytes = read_text(img_path, "images");
        if (bytes.size() != count * sizeof(float))
            throw FormatError("images: expected " + std::to_string(count * sizeof(float)) + " bytes, found " +
                              std::to_string(bytes.size()));
        d.images = Tensor({n, c, h, w});
        for (std::size_t i = 0; i < count; ++i) {
            float v;
            std::memcpy(&v, bytes.data() + i * sizeof(float), sizeof(float));
            if (!std::isfinite(v)) throw FormatError("images: non-finite value at element " + std::to_string(i));
            d.images[i] = v;
        }
    }
    {
        std::istringstream csv(read_text(lab_path, "labels"));
        std::string line;
        std::string header = "index,subject";
        for (std::size_t k = 0; k < q; ++k) header += ",au_" + std::to_string(k + 1);
        if (!std::getline(csv, line) || line != header) throw FormatError("labels: header must be '" + header + "'");
        d.labels = LabelMatrix(n, q);
        d.subjects.resize(n);
        std::size_t row = 0;
        while (std::getline(csv, line)) {
            if (line.empty()) continue;
            const std::string where = "labels row " + std::to_string(row);
            if (row >= n) throw FormatError("labels: more rows than the manifest's " + std::to_string(n) + " samples");
            const auto cells = split_csv(line);
            if (cells.size() != q + 2) throw FormatError(where + ": expected " + std::to_string(q + 2) + " columns");
            if (parse_int(cells[0], where + ", index") != static_cast<long>(row))
                throw FormatError(where + ", index: out of order");
            d.subjects[row] = static_cast<int>(parse_int(cells[1], where + ", subject"));
            for (std::size_t k = 0; k < q; ++k) {
                const std::string col = where + ", au_" + std::to_string(k + 1);
                const long v = parse_int(cells[k + 2], col);
                if (v < 1 || v > levels[k])
                    throw FormatError(col + ": level " + std::to_string(v) + " outside 1.." + std::to_string(levels[k]));
                d.labels.at(row, k) = static_cast<int>(v);
            }
            ++row;
        }
        if (row != n) throw FormatError("labels: truncated, " + std::to_string(row) + " of " + std::to_string(n) + " rows");
    }
    return d;
}

// ---------------------------------------------------------------------------
// Configuration

namespace {

// Records the key path while parsing so that a malformed literal can be
// reported against the key it belongs to.
class PathTracker : public nlohmann::json_sax<json> {
public:
    bool null() override { return value(); }
    bool boolean(bool) override { return value(); }
    bool number_integer(number_integer_t) override { return value(); }
    bool number_unsigned(number_unsigned_t) override { return value(); }
    bool number_float(number_float_t, const string_t&) override { return value(); }
    bool string(string_t&) override { return value(); }
    bool binary(binary_t&) override { return value(); }
    bool start_object(std::size_t) override {
        frames_.push_back({false, {}, 0});
        return true;
    }
    bool key(string_t& k) override {
        frames_.back().key = k;
        return true;
    }
    bool end_object() override {
        frames_.pop_back();
        return value();
    }
    bool start_array(std::size_t) override {
        frames_.push_back({true, {}, 0});
        return true;
    }
    bool end_array() override {
        frames_.pop_back();
        return value();
    }
    bool parse_error(std::size_t, const std::string& token, const nlohmann::detail::exception&) override {
        throw ConfigError(path(), "malformed value '" + token + "'");
    }

private:
    struct Frame {
        bool array;
        std::string key;
        std::size_t index;
    };

    bool value() {
        if (!frames_.empty() && frames_.back().array) ++frames_.back().index;
        return true;
    }

    std::string path() const {
        std::string p;
        for (const auto& f : frames_) {
            if (f.array) {
                p += "[" + std::to_string(f.index) + "]";
            } else if (!f.key.empty()) {
                if (!p.empty()) p += ".";
                p += f.key;
            }
        }
        return p;
    }

    std::vector<Frame> frames_;
};

// Typed access to one JSON object; unknown keys are rejected by finish().
class Reader {
public:
    Reader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j.is_object()) throw ConfigError(path_, "expected an object");
    }

    std::string key_path(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }
    bool has(const std::string& key) {
        seen_.push_back(key);
        return j_.contains(key);
    }
    const json& at(const std::string& key) const { return j_.at(key); }

    void get(const std::string& key, std::size_t& out) {
        if (!has(key)) return;
        const json& v = j_.at(key);
        if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<long long>() >= 0))
            throw ConfigError(key_path(key), "expected a non-negative integer");
        out = v.get<std::size_t>();
    }
    void get(const std::string& key, int& out) {
        if (!has(key)) return;
        const json& v = j_.at(key);
        if (!v.is_number_integer()) throw ConfigError(key_path(key), "expected an integer");
        out = v.get<int>();
    }
    void get(const std::string& key, double& out) {
        if (!has(key)) return;
        const json& v = j_.at(key);
        if (!v.is_number()) throw ConfigError(key_path(key), "expected a number");
        out = v.get<double>();
    }
    void get(const std::string& key, bool& out) {
        if (!has(key)) return;
        const json& v = j_.at(key);
        if (!v.is_boolean()) throw ConfigError(key_path(key), "expected true or false");
        out = v.get<bool>();
    }
    void get(const std::string& key, std::string& out) {
        if (!has(key)) return;
        const json& v = j_.at(key);
        if (!v.is_string()) throw ConfigError(key_path(key), "expected a string");
        out = v.get<std::string>();
    }

    void finish() const {
        for (auto it = j_.begin(); it != j_.end(); ++it)
            if (std::find(seen_.begin(), seen_.end(), it.key()) == seen_.end())
                throw ConfigError(key_path(it.key()), "unknown key");
    }

private:
    const json& j_;
    std::string path_;
    std::vector<std::string> seen_;
};

void read_model(Reader& r, vcae::Architecture& a) {
    std::string preset;
    r.get("preset", preset);
    if (!preset.empty()) {
        if (preset == "desk") {
            a = vcae::Architecture::desk_default();
        } else if (preset == "paper") {
            a = vcae::Architecture::paper_profile();
        } else {
            throw ConfigError(r.key_path("preset"), "expected \"desk\" or \"paper\"");
        }
    }
    r.get("channels", a.channels);
    r.get("height", a.height);
    r.get("width", a.width);
    r.get("latent_dim", a.latent_dim);
    if (r.has("conv_stages")) {
        const json& arr = r.at("conv_stages");
        if (!arr.is_array()) throw ConfigError(r.key_path("conv_stages"), "expected an array");
        a.stages.clear();
        for (std::size_t i = 0; i < arr.size(); ++i) {
            Reader s(arr[i], r.key_path("conv_stages") + "[" + std::to_string(i) + "]");
            vcae::ConvStage st;
            if (!arr[i].contains("filters")) throw ConfigError(s.key_path("filters"), "missing required key");
            s.get("filters", st.filters);
            s.get("kernel", st.kernel);
            s.get("pool", st.pool);
            s.finish();
            a.stages.push_back(st);
        }
    }
    if (r.has("hidden")) {
        const json& arr = r.at("hidden");
        if (!arr.is_array()) throw ConfigError(r.key_path("hidden"), "expected an array");
        a.hidden.clear();
        for (std::size_t i = 0; i < arr.size(); ++i) {
            if (!arr[i].is_number_unsigned())
                throw ConfigError(r.key_path("hidden") + "[" + std::to_string(i) + "]", "expected a positive integer");
            a.hidden.push_back(arr[i].get<std::size_t>());
        }
    }
    r.finish();
}

Config read_config(const json& doc) {
    Config c;
    Reader root(doc, "");
    if (root.has("data")) {
        Reader r(root.at("data"), "data");
        auto& s = c.synth;
        r.get("height", s.height);
        r.get("width", s.width);
        r.get("outputs", s.outputs);
        r.get("levels", s.levels);
        r.get("subjects", s.subjects);
        r.get("samples", s.samples);
        r.get("blob_gain", s.blob_gain);
        r.get("blob_sigma", s.blob_sigma);
        r.get("offset_scale", s.offset_scale);
        r.get("noise", s.noise);
        r.get("subject_seed", s.subject_seed);
        r.get("seed", s.seed);
        r.finish();
    }
    auto& t = c.train;
    if (root.has("model")) {
        Reader r(root.at("model"), "model");
        read_model(r, t.arch);
    }
    if (root.has("gp")) {
        Reader r(root.at("gp"), "gp");
        r.get("latent_dim", t.gp_init.latent_dim);
        r.get("sf2", t.gp_init.sf2);
        r.get("ell", t.gp_init.ell);
        r.get("noise_r", t.gp_init.noise_r);
        r.get("noise_v", t.gp_init.noise_v);
        r.get("m_scale", t.gp_init.m_scale);
        r.get("s_init", t.gp_init.s_init);
        r.get("steps_per_epoch", t.gp_steps);
        r.get("mc_samples", t.mc_samples);
        r.get("lr", t.gp_lr);
        r.get("momentum", t.gp_momentum);
        r.get("clip_norm", t.gp_clip_norm);
        r.finish();
    }
    if (root.has("split")) {
        Reader r(root.at("split"), "split");
        r.get("n_l", t.n_l);
        r.finish();
    }
    if (root.has("train")) {
        Reader r(root.at("train"), "train");
        r.get("warm_start_epochs", t.warm_start_epochs);
        r.get("max_epochs", t.max_epochs);
        r.get("n_t_alpha", t.n_t_alpha);
        r.get("n_t_beta", t.n_t_beta);
        r.get("patience", t.patience);
        r.get("tolerance", t.tolerance);
        r.get("batch_size", t.batch_size);
        r.get("sigma_x", t.sigma_x);
        r.get("lr", t.lr);
        r.get("momentum", t.momentum);
        r.get("clip_norm", t.clip_norm);
        r.get("seed", t.seed);
        r.finish();
    }
    root.finish();
    try {
        c.synth.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError("data", e.what());
    }
    c.train.validate();
    return c;
}

json config_json(const Config& c) {
    const auto& s = c.synth;
    const auto& t = c.train;
    json stages = json::array();
    for (const auto& st : t.arch.stages) stages.push_back({{"filters", st.filters}, {"kernel", st.kernel}, {"pool", st.pool}});
    json j;
    j["data"] = {{"height", s.height},
                 {"width", s.width},
                 {"outputs", s.outputs},
                 {"levels", s.levels},
                 {"subjects", s.subjects},
                 {"samples", s.samples},
                 {"blob_gain", s.blob_gain},
                 {"blob_sigma", s.blob_sigma},
                 {"offset_scale", s.offset_scale},
                 {"noise", s.noise},
                 {"subject_seed", s.subject_seed},
                 {"seed", s.seed}};
    j["model"] = {{"channels", t.arch.channels}, {"height", t.arch.height},         {"width", t.arch.width},
                  {"conv_stages", stages},       {"hidden", t.arch.hidden},         {"latent_dim", t.arch.latent_dim}};
    j["gp"] = {{"latent_dim", t.gp_init.latent_dim},
               {"sf2", t.gp_init.sf2},
               {"ell", t.gp_init.ell},
               {"noise_r", t.gp_init.noise_r},
               {"noise_v", t.gp_init.noise_v},
               {"m_scale", t.gp_init.m_scale},
               {"s_init", t.gp_init.s_init},
               {"steps_per_epoch", t.gp_steps},
               {"mc_samples", t.mc_samples},
               {"lr", t.gp_lr},
               {"momentum", t.gp_momentum},
               {"clip_norm", t.gp_clip_norm}};
    j["split"] = {{"n_l", t.n_l}};
    j["train"] = {{"warm_start_epochs", t.warm_start_epochs},
                  {"max_epochs", t.max_epochs},
                  {"n_t_alpha", t.n_t_alpha},
                  {"n_t_beta", t.n_t_beta},
                  {"patience", t.patience},
                  {"tolerance", t.tolerance},
                  {"batch_size", t.batch_size},
                  {"sigma_x", t.sigma_x},
                  {"lr", t.lr},
                  {"momentum", t.momentum},
                  {"clip_norm", t.clip_norm},
                  {"seed", t.seed}};
    return j;
}

}  // namespace

Config parse_config_string(const std::string& text) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::parse_error& e) {
        PathTracker tracker;
        json::sax_parse(text, &tracker);  // throws ConfigError with the key path
        throw ConfigError("", std::string("malformed document: ") + e.what());
    }
    return read_config(doc);
}

Config parse_config(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("", "cannot open config " + path.string());
    std::ostringstream os;
    os << in.rdbuf();
    return parse_config_string(os.str());
}

std::string config_to_string(const Config& config) { return config_json(config).dump(2) + "\n"; }

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr std::size_t kHistoryCols = 12;

struct BlockWriter {
    json list = json::array();
    std::vector<const Tensor*> tensors;
    void add(const std::string& name, const Tensor& t) {
        list.push_back({{"name", name}, {"shape", t.shape()}});
        tensors.push_back(&t);
    }
    void add_set(const std::string& prefix, const ParamSet& p) {
        for (std::size_t i = 0; i < p.size(); ++i) add(prefix + p.name(i), p.at(i));
    }
};

json split_json(const trainer::Split& s) { return {{"rest", s.rest}, {"subset", s.subset}}; }

json opt_json(const trainer::OptimizerState& o) {
    return {{"lr", o.lr}, {"momentum", o.momentum}, {"clip_norm", o.clip_norm}};
}

}  // namespace

void save_checkpoint(const trainer::TrainState& s, const fs::path& path) {
    BlockWriter blocks;
    blocks.add_set("vcae/", s.vcae);
    blocks.add_set("gp/", s.gp.params);
    blocks.add("gp.z0", s.gp.z0);
    if (!s.prior.mean.empty()) {
        blocks.add("prior.mean", s.prior.mean);
        blocks.add("prior.var", s.prior.var);
    }
    blocks.add_set("opt_vcae/", s.opt_vcae.velocity);
    blocks.add_set("opt_gp/", s.opt_gp.velocity);
    Tensor hist;
    json hist_meta = json::array();
    if (!s.history.empty()) {
        hist = Tensor({s.history.size(), kHistoryCols});
        for (std::size_t i = 0; i < s.history.size(); ++i) {
            const auto& r = s.history[i];
            const double row[kHistoryCols] = {r.x.kl, r.x.recon, r.x.cls, r.x.total, r.z.kl,   r.z.recon,
                                              r.z.ord, r.z.total, r.alpha, r.beta,   r.l_dc, r.wall_seconds};
            std::copy(row, row + kHistoryCols, hist.data() + i * kHistoryCols);
            hist_meta.push_back({{"epoch", r.epoch}, {"warm_start", r.warm_start}});
        }
        blocks.add("history", hist);
    }

    json meta;
    meta["format"] = "deepcoder-checkpoint";
    meta["config"] = config_json(Config{{}, s.config});
    meta["levels"] = s.levels;
    meta["split"] = split_json(s.split);
    meta["rng"] = s.rng.serialize();
    meta["joint_epochs"] = s.joint_epochs;
    meta["converged"] = s.converged;
    meta["opt_vcae"] = opt_json(s.opt_vcae);
    meta["opt_gp"] = opt_json(s.opt_gp);
    meta["history"] = hist_meta;
    meta["blocks"] = blocks.list;
    const std::string text = meta.dump();

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write checkpoint " + path.string());
    const std::uint32_t version = kCheckpointVersion;
    const std::uint64_t len = text.size();
    out.write(kCheckpointMagic, 4);
    out.write(reinterpret_cast<const char*>(&version), sizeof version);
    out.write(reinterpret_cast<const char*>(&len), sizeof len);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const Tensor* t : blocks.tensors)
        out.write(reinterpret_cast<const char*>(t->data()), static_cast<std::streamsize>(t->size() * sizeof(double)));
    if (!out) throw std::runtime_error("checkpoint write failed: " + path.string());
}

trainer::TrainState load_checkpoint(const fs::path& path) {
    const std::string bytes = read_text(path, "checkpoint");
    std::size_t pos = 0;
    const auto need = [&](std::size_t n, const std::string& what) {
        if (bytes.size() - pos < n) throw FormatError("checkpoint: truncated " + what);
    };
    need(4 + 4 + 8, "header");
    if (std::memcmp(bytes.data(), kCheckpointMagic, 4) != 0) throw FormatError("checkpoint.magic: not a checkpoint file");
    std::uint32_t version;
    std::uint64_t len;
    std::memcpy(&version, bytes.data() + 4, 4);
    std::memcpy(&len, bytes.data() + 8, 8);
    pos = 16;
    if (version != kCheckpointVersion) throw FormatError("checkpoint.version: unsupported version " + std::to_string(version));
    need(len, "metadata");
    json meta;
    try {
        meta = json::parse(bytes.substr(pos, len));
    } catch (const json::parse_error& e) {
        throw FormatError(std::string("checkpoint.metadata: ") + e.what());
    }
    pos += len;

    trainer::TrainState s;
    try {
        s.config = read_config(meta.at("config")).train;
        s.levels = meta.at("levels").get<std::vector<int>>();
        s.split.rest = meta.at("split").at("rest").get<std::vector<std::size_t>>();
        s.split.subset = meta.at("split").at("subset").get<std::vector<std::size_t>>();
        s.rng.deserialize(meta.at("rng").get<std::string>());
        s.joint_epochs = meta.at("joint_epochs").get<std::size_t>();
        s.converged = meta.at("converged").get<bool>();
        for (auto [key, opt] : {std::pair{"opt_vcae", &s.opt_vcae}, std::pair{"opt_gp", &s.opt_gp}}) {
            const json& o = meta.at(key);
            opt->lr = o.at("lr").get<double>();
            opt->momentum = o.at("momentum").get<double>();
            opt->clip_norm = o.at("clip_norm").get<double>();
        }
    } catch (const ConfigError& e) {
        throw FormatError(std::string("checkpoint.config: ") + e.what());
    } catch (const json::exception& e) {
        throw FormatError(std::string("checkpoint.metadata: ") + e.what());
    } catch (const std::invalid_argument& e) {
        throw FormatError(std::string("checkpoint.rng: ") + e.what());
    }
    s.gp.levels = s.levels;

    Tensor hist;
    const json& list = meta.at("blocks");
    if (!list.is_array()) throw FormatError("checkpoint.blocks: expected an array");
    for (const auto& b : list) {
        std::string name;
        Shape shape;
        try {
            name = b.at("name").get<std::string>();
            shape = b.at("shape").get<Shape>();
        } catch (const json::exception&) {
            throw FormatError("checkpoint.blocks: malformed entry");
        }
        std::size_t count = 1;
        for (std::size_t d : shape) {
            if (d == 0 || count > (bytes.size() / sizeof(double)) / d) throw FormatError("checkpoint block " + name + ": bad shape");
            count *= d;
        }
        need(count * sizeof(double), "block " + name);
        Tensor t(shape);
        std::memcpy(t.data(), bytes.data() + pos, count * sizeof(double));
        pos += count * sizeof(double);
        const auto starts = [&](const char* p) { return name.rfind(p, 0) == 0; };
        const auto rest = [&](const char* p) { return name.substr(std::strlen(p)); };
        if (starts("vcae/")) s.vcae.add(rest("vcae/"), std::move(t));
        else if (starts("gp/")) s.gp.params.add(rest("gp/"), std::move(t));
        else if (name == "gp.z0") s.gp.z0 = std::move(t);
        else if (name == "prior.mean") s.prior.mean = std::move(t);
        else if (name == "prior.var") s.prior.var = std::move(t);
        else if (starts("opt_vcae/")) s.opt_vcae.velocity.add(rest("opt_vcae/"), std::move(t));
        else if (starts("opt_gp/")) s.opt_gp.velocity.add(rest("opt_gp/"), std::move(t));
        else if (name == "history") hist = std::move(t);
        else throw FormatError("checkpoint block " + name + ": unknown block");
    }
    if (pos != bytes.size()) throw FormatError("checkpoint: trailing bytes after the last block");

    const json& hm = meta.at("history");
    if (hm.size() != (hist.empty() ? 0 : hist.dim(0)) || (!hist.empty() && hist.dim(1) != kHistoryCols))
        throw FormatError("checkpoint.history: row count does not match the history block");
    for (std::size_t i = 0; i < hm.size(); ++i) {
        trainer::EpochRecord r;
        r.epoch = hm[i].at("epoch").get<std::size_t>();
        r.warm_start = hm[i].at("warm_start").get<bool>();
        const double* row = hist.data() + i * kHistoryCols;
        r.x = {row[0], row[1], row[2], row[3]};
        r.z = {row[4], row[5], row[6], row[7]};
        r.alpha = row[8];
        r.beta = row[9];
        r.l_dc = row[10];
        r.wall_seconds = row[11];
        s.history.push_back(r);
    }
    for (const char* key : {"M", "log_S", "w_o", "gamma_raw"})
        if (!s.gp.params.contains(key)) throw FormatError(std::string("checkpoint: missing block gp/") + key);
    if (s.gp.z0.empty()) throw FormatError("checkpoint: missing block gp.z0");
    return s;
}

std::string metrics_csv_header() {
    return "epoch,L_kl_X,L_r_X,L_p_X,L_kl_Z0,L_r_Z0,L_o_Z0,L_DC,alpha,beta,wall_seconds";
}

std::string metrics_csv_row(const trainer::EpochRecord& r) {
    char buf[512];
    std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.6f", r.epoch, r.x.kl,
                  r.x.recon, r.x.cls, r.z.kl, r.z.recon, r.z.ord, r.l_dc, r.alpha, r.beta, r.wall_seconds);
    return buf;
}

}  // namespace deepcoder::dataio
