#include "uad/config.hpp"

#include <cmath>
#include <set>

#include "json.hpp"

#include "uad/rng.hpp"
#include "uad/volume_io.hpp"

namespace uad {

namespace {

using nlohmann::json;

// Reads one JSON object, remembering which keys were consumed.
class Section {
  public:
    Section(const json &j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object())
            throw ConfigError(where() + ": must be an object");
    }

    std::string field(const std::string &key) const { return path_.empty() ? key : path_ + "." + key; }

    bool has(const std::string &key) {
        if (!j_.contains(key))
            return false;
        used_.insert(key);
        return true;
    }

    template <class T>
    void get(const std::string &key, T &out) {
        if (!has(key))
            return;
        try {
            out = j_.at(key).get<T>();
        } catch (const json::exception &) {
            throw ConfigError(field(key) + ": wrong type (got " + j_.at(key).dump() + ")");
        }
    }

    void count(const std::string &key, std::size_t &out) {
        if (!has(key))
            return;
        if (!j_.at(key).is_number_unsigned())
            throw ConfigError(field(key) + ": must be a non-negative integer (got " + j_.at(key).dump() + ")");
        out = j_.at(key).get<std::size_t>();
    }

    void counts(const std::string &key, std::vector<std::size_t> &out) {
        if (!has(key))
            return;
        const auto &a = j_.at(key);
        if (!a.is_array())
            throw ConfigError(field(key) + ": must be an array of non-negative integers");
        out.clear();
        for (const auto &e : a) {
            if (!e.is_number_unsigned())
                throw ConfigError(field(key) + ": must be an array of non-negative integers");
            out.push_back(e.get<std::size_t>());
        }
    }

    Section sub(const std::string &key) {
        used_.insert(key);
        return Section(j_.at(key), field(key));
    }

    void finish() const {
        for (const auto &item : j_.items())
            if (!used_.contains(item.key()))
                throw ConfigError(field(item.key()) + ": unknown key");
    }

  private:
    std::string where() const { return path_.empty() ? "config" : path_; }

    const json &j_;
    std::string path_;
    std::set<std::string> used_;
};

template <class F>
void with_section(Section &parent, const std::string &key, F &&f) {
    if (!parent.has(key))
        return;
    Section s = parent.sub(key);
    f(s);
    s.finish();
}

template <class E, class P>
void enum_field(Section &s, const std::string &key, E &out, P parse) {
    std::string text;
    s.get(key, text);
    if (text.empty())
        return;
    try {
        out = parse(text);
    } catch (const std::invalid_argument &e) {
        throw ConfigError(s.field(key) + ": " + e.what());
    }
}

ReconstructorKind parse_reconstructor(const std::string &s) {
    if (s == "vae")
        return ReconstructorKind::vae;
    if (s == "pca")
        return ReconstructorKind::pca;
    throw std::invalid_argument("must be vae|pca, got '" + s + "'");
}

void check(bool ok, const std::string &field, const std::string &msg) {
    if (!ok)
        throw ConfigError(field + ": " + msg);
}

bool finite_nonneg(double v) { return std::isfinite(v) && v >= 0.0; }

} // namespace

const char *to_string(ReconstructorKind k) { return k == ReconstructorKind::vae ? "vae" : "pca"; }

std::uint64_t stage_seed(std::uint64_t seed, const std::string &stage) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : stage) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return splitmix64(seed ^ h);
}

void PipelineConfig::validate() const {
    check(!paths.out.empty(), "paths.out", "must not be empty");

    check(phantom.n_cn >= 4, "phantom.n_cn", "must be >= 4");
    check(phantom.dims.nx >= 8 && phantom.dims.ny >= 8 && phantom.dims.nz >= 8, "phantom.dims",
          "every extent must be >= 8");
    try {
        phantom.params.validate();
    } catch (const std::invalid_argument &e) {
        throw ConfigError(e.what());
    }

    try {
        split.fractions.validate();
    } catch (const std::invalid_argument &e) {
        throw ConfigError(std::string("split.fractions: ") + e.what());
    }
    check(split.age_bins.size() >= 2, "split.age_bins", "needs at least two edges");
    for (std::size_t i = 1; i < split.age_bins.size(); ++i)
        check(split.age_bins[i] > split.age_bins[i - 1], "split.age_bins", "must be strictly ascending");

    try {
        train.optimiser.validate();
    } catch (const std::invalid_argument &e) {
        throw ConfigError(e.what());
    }
    vae::Architecture a = train.arch;
    a.input_dims = phantom.dims;
    try {
        a.validate();
    } catch (const std::invalid_argument &e) {
        throw ConfigError(std::string("train (architecture): ") + e.what());
    }
    check(train.pca_components >= 1, "train.pca_components", "must be >= 1");

    check(simulate.degree > 0.0 && simulate.degree < 1.0, "simulate.degree", "must lie in (0, 1)");

    check(anomaly.eps_floor > 0.0 && std::isfinite(anomaly.eps_floor), "anomaly.eps_floor", "must be > 0");
    for (double t : anomaly.thresholds)
        check(finite_nonneg(t), "anomaly.thresholds", "every threshold must be >= 0");

    for (std::size_t i = 0; i < eval.sweep_thresholds.size(); ++i) {
        check(finite_nonneg(eval.sweep_thresholds[i]), "eval.sweep_thresholds", "every threshold must be >= 0");
        check(i == 0 || eval.sweep_thresholds[i] >= eval.sweep_thresholds[i - 1], "eval.sweep_thresholds",
              "must be ascending");
    }
}

std::string PipelineConfig::to_json() const {
    const auto &p = phantom.params;
    const auto &o = train.optimiser;
    const auto &a = train.arch;
    json j;
    j["seed"] = seed;
    j["paths"] = {{"out", paths.out.generic_string()}, {"cohort", paths.cohort.generic_string()}};
    j["phantom"] = {{"n_cn", phantom.n_cn},
                    {"n_ad", phantom.n_ad},
                    {"dims", {phantom.dims.nx, phantom.dims.ny, phantom.dims.nz}},
                    {"spacing", {p.spacing.sx, p.spacing.sy, p.spacing.sz}},
                    {"noise_sd", p.noise_sd},
                    {"field_amplitude", p.field_amplitude},
                    {"shape_jitter", p.shape_jitter},
                    {"gain_scale", p.gain_scale},
                    {"blur_radius", p.blur_radius},
                    {"ad_degree", p.ad_degree},
                    {"max_sessions", p.max_sessions},
                    {"age_range", {p.age_min, p.age_max}}};
    j["split"] = {{"fractions", {split.fractions.train, split.fractions.validation, split.fractions.test}},
                  {"age_bins", split.age_bins}};
    j["train"] = {{"reconstructor", to_string(train.reconstructor)},
                  {"epochs", o.epochs},
                  {"batch_size", o.batch_size},
                  {"learning_rate", o.learning_rate},
                  {"kl_weight", o.kl_weight},
                  {"beta1", o.beta1},
                  {"beta2", o.beta2},
                  {"adam_eps", o.adam_eps},
                  {"checkpoint_every", o.checkpoint_every},
                  {"channels", a.channels},
                  {"kernel", a.kernel},
                  {"stride", a.stride},
                  {"padding", a.padding},
                  {"latent_dim", a.latent_dim},
                  {"leaky_slope", a.leaky_slope},
                  {"norm", vae::to_string(a.norm)},
                  {"output", vae::to_string(a.output)},
                  {"pca_components", train.pca_components}};
    j["simulate"] = {{"regions", simulate.regions},
                     {"degree", simulate.degree},
                     {"smooth_radius", simulate.smooth_radius}};
    j["anomaly"] = {{"eps_floor", anomaly.eps_floor},
                    {"thresholds", anomaly.thresholds},
                    {"mode", to_string(anomaly.mode)}};
    j["eval"] = {{"use_magnitude", eval.use_magnitude},
                 {"domain", to_string(eval.domain)},
                 {"sweep_thresholds", eval.sweep_thresholds}};
    return j.dump(2) + "\n";
}

PipelineConfig PipelineConfig::from_json(const std::string &text) {
    json root;
    try {
        root = json::parse(text);
    } catch (const json::exception &e) {
        throw ConfigError(std::string("config: not valid JSON: ") + e.what());
    }
    PipelineConfig c;
    Section s(root, "");
    if (s.has("seed")) {
        if (!root.at("seed").is_number_unsigned())
            throw ConfigError("seed: must be a non-negative integer");
        c.seed = root.at("seed").get<std::uint64_t>();
    }
    with_section(s, "paths", [&](Section &p) {
        std::string out = c.paths.out.string(), cohort;
        p.get("out", out);
        p.get("cohort", cohort);
        c.paths.out = out;
        c.paths.cohort = cohort;
    });
    with_section(s, "phantom", [&](Section &p) {
        auto &pp = c.phantom.params;
        p.count("n_cn", c.phantom.n_cn);
        p.count("n_ad", c.phantom.n_ad);
        std::vector<std::size_t> dims;
        p.counts("dims", dims);
        if (!dims.empty()) {
            check(dims.size() == 3, "phantom.dims", "needs three entries");
            c.phantom.dims = {dims[0], dims[1], dims[2]};
        }
        std::vector<double> sp;
        p.get("spacing", sp);
        if (!sp.empty()) {
            check(sp.size() == 3, "phantom.spacing", "needs three entries");
            pp.spacing = {sp[0], sp[1], sp[2]};
        }
        p.get("noise_sd", pp.noise_sd);
        p.get("field_amplitude", pp.field_amplitude);
        p.get("shape_jitter", pp.shape_jitter);
        p.get("gain_scale", pp.gain_scale);
        p.count("blur_radius", pp.blur_radius);
        p.get("ad_degree", pp.ad_degree);
        p.count("max_sessions", pp.max_sessions);
        std::vector<double> ages;
        p.get("age_range", ages);
        if (!ages.empty()) {
            check(ages.size() == 2, "phantom.age_range", "needs two entries");
            pp.age_min = ages[0];
            pp.age_max = ages[1];
        }
    });
    with_section(s, "split", [&](Section &p) {
        std::vector<double> f;
        p.get("fractions", f);
        if (!f.empty()) {
            check(f.size() == 3, "split.fractions", "needs three entries (train, validation, test)");
            c.split.fractions = {f[0], f[1], f[2]};
        }
        p.get("age_bins", c.split.age_bins);
    });
    with_section(s, "train", [&](Section &p) {
        auto &o = c.train.optimiser;
        auto &a = c.train.arch;
        enum_field(p, "reconstructor", c.train.reconstructor, parse_reconstructor);
        p.count("epochs", o.epochs);
        p.count("batch_size", o.batch_size);
        p.get("learning_rate", o.learning_rate);
        p.get("kl_weight", o.kl_weight);
        p.get("beta1", o.beta1);
        p.get("beta2", o.beta2);
        p.get("adam_eps", o.adam_eps);
        p.count("checkpoint_every", o.checkpoint_every);
        p.counts("channels", a.channels);
        p.count("kernel", a.kernel);
        p.count("stride", a.stride);
        p.count("padding", a.padding);
        p.count("latent_dim", a.latent_dim);
        p.get("leaky_slope", a.leaky_slope);
        enum_field(p, "norm", a.norm, vae::parse_norm);
        enum_field(p, "output", a.output, vae::parse_output);
        p.count("pca_components", c.train.pca_components);
    });
    with_section(s, "simulate", [&](Section &p) {
        p.get("regions", c.simulate.regions);
        p.get("degree", c.simulate.degree);
        p.count("smooth_radius", c.simulate.smooth_radius);
    });
    with_section(s, "anomaly", [&](Section &p) {
        p.get("eps_floor", c.anomaly.eps_floor);
        p.get("thresholds", c.anomaly.thresholds);
        enum_field(p, "mode", c.anomaly.mode, parse_threshold_mode);
    });
    with_section(s, "eval", [&](Section &p) {
        p.get("use_magnitude", c.eval.use_magnitude);
        enum_field(p, "domain", c.eval.domain, parse_domain);
        p.get("sweep_thresholds", c.eval.sweep_thresholds);
    });
    s.finish();
    c.validate();
    return c;
}

PipelineConfig load_config(const std::filesystem::path &path) {
    if (!std::filesystem::exists(path))
        throw ConfigError("config: file " + path.string() + " does not exist");
    return PipelineConfig::from_json(read_text(path));
}

} // namespace uad
