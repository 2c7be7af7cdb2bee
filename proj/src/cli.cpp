#include "uad/cli.hpp"

#include <algorithm>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"

#include "uad/anomaly.hpp"
#include "uad/config.hpp"
#include "uad/dataset.hpp"
#include "uad/error.hpp"
#include "uad/eval.hpp"
#include "uad/format.hpp"
#include "uad/parallel.hpp"
#include "uad/pca.hpp"
#include "uad/popstats.hpp"
#include "uad/reconstructor.hpp"
#include "uad/report.hpp"
#include "uad/simulate.hpp"
#include "uad/split.hpp"
#include "uad/train.hpp"
#include "uad/volume_io.hpp"

namespace uad::cli {

namespace {

namespace fs = std::filesystem;

// Bad command-line input that is not a configuration field.
class UsageError : public std::invalid_argument {
  public:
    using std::invalid_argument::invalid_argument;
};

struct Options {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::string out_dir;
    int threads = 0;
    std::string subject;
    std::optional<std::size_t> epochs;
    std::string reconstructor;
    std::optional<double> degree;
};

class Pipeline {
  public:
    Pipeline(PipelineConfig cfg, std::string command, std::ostream &log)
        : cfg_(std::move(cfg)), command_(std::move(command)), log_(log) {}

    void generate();
    void split();
    void train();
    void reconstruct(const std::string &subject);
    void simulate();
    void map(const std::string &subject);
    void evaluate();
    void report(const std::string &subject);
    void write_manifest(const nlohmann::json &args);

  private:
    fs::path out() const { return cfg_.paths.out; }
    fs::path split_path() const { return out() / "split.json"; }
    fs::path model_dir() const { return out() / "model"; }
    fs::path stats_dir() const { return out() / "stats"; }
    fs::path sim_dir() const { return out() / "sim"; }
    fs::path maps_dir(const std::string &sid) const { return out() / "maps" / sid; }

    const CohortStore &store();
    CohortSplit load_split();
    PopulationStats load_stats();
    std::unique_ptr<Reconstructor> load_reconstructor();
    std::vector<EvalPair> load_pairs();
    std::vector<int> region_codes();
    std::vector<SubjectRecord> records_of(const std::vector<std::string> &ids);
    std::vector<Volume> sessions_of(const std::vector<std::string> &ids);
    const EvalPair &pick(const std::vector<EvalPair> &pairs, const std::string &subject) const;

    void wrote(const fs::path &p) { outputs_.push_back(p); }
    void wrote(const std::vector<fs::path> &ps) { outputs_.insert(outputs_.end(), ps.begin(), ps.end()); }

    PipelineConfig cfg_;
    std::string command_;
    std::ostream &log_;
    std::optional<CohortStore> store_;
    std::vector<fs::path> outputs_;

};

void require_file(const fs::path &p, const std::string &what, const std::string &command) {
    if (!fs::exists(p))
        throw PrerequisiteError(what + " not found at " + p.string() + "; run `uadmap " + command + "` first",
                                command);
}

const CohortStore &Pipeline::store() {
    if (!store_) {
        const fs::path dir = cfg_.cohort_dir();
        require_file(dir / "manifest.csv", "cohort manifest", "generate");
        store_.emplace(dir);
    }
    return *store_;
}

CohortSplit Pipeline::load_split() {
    require_file(split_path(), "subject split", "split");
    return CohortSplit::from_json(read_text(split_path()));
}

PopulationStats Pipeline::load_stats() {
    require_file(stats_dir() / "stats.json", "population statistics", "train");
    PopulationStats s = load_population_stats(stats_dir());
    s.eps_floor = cfg_.anomaly.eps_floor;
    return s;
}

std::unique_ptr<Reconstructor> Pipeline::load_reconstructor() {
    if (cfg_.train.reconstructor == ReconstructorKind::vae) {
        require_file(model_dir() / "vae.ckpt", "VAE checkpoint", "train");
        return std::make_unique<VaeReconstructor>(vae::load_checkpoint(model_dir() / "vae.ckpt"));
    }
    require_file(model_dir() / "pca.bin", "PCA model", "train");
    return std::make_unique<PcaReconstructor>(load_pca(model_dir() / "pca.bin"));
}

std::vector<SubjectRecord> Pipeline::records_of(const std::vector<std::string> &ids) {
    std::vector<SubjectRecord> out;
    for (const auto &id : ids) {
        const auto &recs = store().records();
        const auto it = std::find_if(recs.begin(), recs.end(), [&](const auto &r) { return r.subject_id == id; });
        if (it == recs.end())
            throw FormatError("split names subject " + id + ", which is not in the cohort");
        out.push_back(*it);
    }
    return out;
}

std::vector<Volume> Pipeline::sessions_of(const std::vector<std::string> &ids) {
    std::vector<Volume> out;
    for (const auto &r : records_of(ids))
        for (const auto &ses : r.sessions)
            out.push_back(store().load(r.subject_id, ses));
    return out;
}

std::vector<int> Pipeline::region_codes() {
    const RegionAtlas &atlas = store().atlas();
    if (cfg_.simulate.regions.empty())
        return ad_region_codes(atlas);
    std::vector<int> codes;
    for (const auto &name : cfg_.simulate.regions) {
        const auto code = atlas.code_of(name);
        if (!code)
            throw ConfigError("simulate.regions: atlas has no region named '" + name + "'");
        codes.push_back(*code);
    }
    return codes;
}

std::vector<EvalPair> Pipeline::load_pairs() {
    require_file(sim_dir() / "pairs.csv", "simulated pair manifest", "simulate");
    const Volume mask = load_volume(sim_dir() / "mask.vol");
    std::vector<EvalPair> pairs;
    for (const auto &row : parse_pairs_csv(read_text(sim_dir() / "pairs.csv"))) {
        std::string session;
        for (const auto &r : store().records())
            if (r.subject_id == row.subject_id)
                session = r.sessions.front();
        pairs.push_back({row.subject_id, session, load_volume(sim_dir() / row.healthy_path),
                         load_volume(sim_dir() / row.simulated_path), mask});
    }
    if (pairs.empty())
        throw FormatError("pair manifest is empty");
    return pairs;
}

const EvalPair &Pipeline::pick(const std::vector<EvalPair> &pairs, const std::string &subject) const {
    for (const auto &p : pairs)
        if (p.subject_id == subject)
            return p;
    throw UsageError("subject " + subject + " has no simulated pair (test subjects only)");
}

void Pipeline::write_manifest(const nlohmann::json &args) {
    std::vector<std::string> rel;
    for (const auto &p : outputs_)
        rel.push_back(fs::path(p).lexically_relative(out()).generic_string());
    std::sort(rel.begin(), rel.end());
    rel.erase(std::unique(rel.begin(), rel.end()), rel.end());
    const nlohmann::json j = {{"command", command_},
                              {"args", args},
                              {"config", nlohmann::json::parse(cfg_.to_json())},
                              {"outputs", rel}};
    write_text(out() / "manifests" / (command_ + ".json"), j.dump(2) + "\n");
}

// ---------------------------------------------------------------------------

void Pipeline::generate() {
    const Cohort cohort = generate_cohort(stage_seed(cfg_.seed, "generate"), cfg_.phantom.n_cn, cfg_.phantom.n_ad,
                                          cfg_.phantom.dims, cfg_.phantom.params);
    const fs::path dir = cfg_.cohort_dir();
    wrote(write_cohort(cohort, dir));

    std::vector<LabeledVolume> labelled;
    for (const auto &sv : cohort.volumes) {
        Diagnosis d = Diagnosis::CN;
        for (const auto &r : cohort.records)
            if (r.subject_id == sv.subject_id)
                d = r.diagnosis;
        labelled.push_back({sv.subject_id + "/" + sv.session_id, d, std::cref(sv.volume)});
    }
    const RegionalStats rs = regional_stats(labelled, cohort.atlas);
    write_text(dir / "regional_uptake.csv", rs.raw_csv());
    write_text(dir / "regional_summary.csv", rs.summary_csv());
    wrote({dir / "regional_uptake.csv", dir / "regional_summary.csv"});
    log_ << "generated " << cohort.records.size() << " subjects, " << cohort.volumes.size() << " images in "
         << dir.string() << "\n";
}

void Pipeline::split() {
    std::vector<SubjectRecord> cn;
    for (const auto &r : store().records())
        if (r.diagnosis == Diagnosis::CN)
            cn.push_back(r);
    const CohortSplit s =
        stratified_split(cn, cfg_.split.fractions, cfg_.split.age_bins, stage_seed(cfg_.seed, "split"));
    write_text(split_path(), s.to_json());
    wrote(split_path());
    log_ << "split " << s.total() << " CN subjects: " << s.train.size() << " train, " << s.validation.size()
         << " validation, " << s.test.size() << " test\n";
}

void Pipeline::train() {
    const CohortSplit s = load_split();
    const std::vector<Volume> train_volumes = sessions_of(s.train);
    const PopulationStats stats = compute_population_stats(train_volumes, cfg_.anomaly.eps_floor);
    wrote(save_population_stats(stats, stats_dir()));

    const Dims dims = store().atlas().labels().dims();
    if (cfg_.train.reconstructor == ReconstructorKind::pca) {
        if (cfg_.train.pca_components > train_volumes.size() - 1)
            throw ConfigError("train.pca_components: must be <= " + std::to_string(train_volumes.size() - 1) +
                              " (training images - 1)");
        const PcaModel m = pca_fit(train_volumes, cfg_.train.pca_components);
        save_pca(m, model_dir() / "pca.bin");
        wrote(model_dir() / "pca.bin");
        log_ << "fitted PCA with " << m.k() << " components on " << train_volumes.size() << " images\n";
        return;
    }

    vae::Architecture arch = cfg_.train.arch;
    arch.input_dims = dims;
    vae::TrainConfig tc = cfg_.train.optimiser;
    tc.seed = stage_seed(cfg_.seed, "train");
    auto on_checkpoint = [&](std::size_t epoch, const vae::VaeModel &m) {
        const fs::path p = model_dir() / ("vae_epoch" + std::to_string(epoch) + ".ckpt");
        vae::save_checkpoint(m, p);
        wrote(p);
    };
    const vae::TrainResult r = vae::train(store().records(), s, store().source(), arch, tc, on_checkpoint);
    vae::save_checkpoint(r.model, model_dir() / "vae.ckpt");
    write_text(model_dir() / "trace.csv", r.trace.csv());
    write_text(model_dir() / "steps.csv", r.trace.steps_csv());
    wrote({model_dir() / "vae.ckpt", model_dir() / "trace.csv", model_dir() / "steps.csv"});
    const auto totals = r.trace.totals("train");
    log_ << "trained VAE for " << tc.epochs << " epochs on " << r.trace.seen_sessions.size()
         << " images; train loss " << format_real(totals.front()) << " -> " << format_real(totals.back()) << "\n";
}

void Pipeline::reconstruct(const std::string &subject) {
    const auto rec = load_reconstructor();
    std::vector<SubjectRecord> targets;
    if (subject.empty()) {
        targets = records_of(load_split().test);
    } else {
        for (const auto &r : store().records())
            if (r.subject_id == subject)
                targets.push_back(r);
        if (targets.empty())
            throw UsageError("unknown subject " + subject);
    }
    for (const auto &r : targets) {
        const std::string &ses = r.sessions.front();
        const fs::path p = out() / "recon" / (r.subject_id + "_" + ses + ".vol");
        save_volume(rec->reconstruct(store().load(r.subject_id, ses)), p);
        wrote(p);
    }
    log_ << "reconstructed " << targets.size() << " images with the " << rec->kind() << " model\n";
}

void Pipeline::simulate() {
    const CohortSplit s = load_split();
    const auto pairs = make_eval_pairs(records_of(s.test), store().source(), store().atlas(), region_codes(),
                                       cfg_.simulate.degree, cfg_.simulate.smooth_radius,
                                       stage_seed(cfg_.seed, "simulate"));
    save_volume(pairs.front().mask, sim_dir() / "mask.vol");
    wrote(sim_dir() / "mask.vol");
    std::vector<PairManifestRow> rows;
    for (const auto &p : pairs) {
        const std::string stem = p.subject_id + "_" + p.session_id;
        save_volume(p.healthy, sim_dir() / (stem + "_healthy.vol"));
        save_volume(p.simulated, sim_dir() / (stem + "_simulated.vol"));
        wrote({sim_dir() / (stem + "_healthy.vol"), sim_dir() / (stem + "_simulated.vol")});
        rows.push_back({p.subject_id, stem + "_healthy.vol", stem + "_simulated.vol", "mask.vol",
                        cfg_.simulate.degree});
    }
    write_text(sim_dir() / "pairs.csv", pairs_csv(rows));
    wrote(sim_dir() / "pairs.csv");
    log_ << "simulated " << pairs.size() << " hypometabolic images (degree " << format_real(cfg_.simulate.degree)
         << ")\n";
}

void Pipeline::map(const std::string &subject) {
    const auto rec = load_reconstructor();
    const PopulationStats stats = load_stats();
    const auto pairs = load_pairs();
    std::vector<const EvalPair *> chosen;
    if (subject.empty())
        for (const auto &p : pairs)
            chosen.push_back(&p);
    else
        chosen.push_back(&pick(pairs, subject));

    for (const EvalPair *p : chosen) {
        const Provenance prov{p->subject_id + "/" + p->session_id + "/simulated", rec->kind(), "stats"};
        const Volume xh = rec->reconstruct(p->simulated);
        const fs::path dir = maps_dir(p->subject_id);
        save_volume(xh, dir / "reconstruction.vol");
        wrote(dir / "reconstruction.vol");
        auto save = [&](const AbnormalityMap &m, const std::string &name) {
            save_map(m, dir / (name + ".vol"));
            wrote({dir / (name + ".vol"), dir / (name + ".json")});
        };
        const AbnormalityMap r = residual_map(p->simulated, xh, prov);
        const AbnormalityMap z = zscore_map(p->simulated, xh, stats, prov);
        save(r, "residual");
        save(z, "zscore");
        for (double t : cfg_.anomaly.thresholds)
            save(threshold_map(z, t, cfg_.anomaly.mode), "zscore_thr" + format_real(t));
    }
    log_ << "wrote abnormality maps for " << chosen.size() << " subject(s)\n";
}

void Pipeline::evaluate() {
    const auto rec = load_reconstructor();
    const PopulationStats stats = load_stats();
    const auto pairs = load_pairs();
    const Volume brain = store().atlas().brain_mask();

    EvalOptions opt;
    opt.use_magnitude = cfg_.eval.use_magnitude;
    opt.domain = cfg_.eval.domain;
    opt.thresholds = cfg_.anomaly.thresholds;
    opt.mode = cfg_.anomaly.mode;

    const auto maps = compute_pair_maps(pairs, *rec, stats, opt.kinds);
    EvalReport rep = evaluate_maps(pairs, maps, opt, &brain);
    rep.eps_floor = stats.eps_floor;
    rep.degree = cfg_.simulate.degree;
    rep.reconstructor = rec->kind();
    const auto sweep = threshold_sweep(pairs, maps, cfg_.eval.sweep_thresholds, opt.mode);

    const fs::path dir = out() / "eval";
    write_text(dir / "report.json", rep.to_json());
    write_text(dir / "report.csv", rep.to_csv());
    write_text(dir / "sweep.csv", sweep_csv(sweep));
    wrote({dir / "report.json", dir / "report.csv", dir / "sweep.csv"});
    for (const auto &a : rep.aggregates)
        log_ << "NCC(" << to_string(a.kind) << ") = " << format_real(a.mean) << " +/- " << format_real(a.std)
             << " over " << a.n << " subjects\n";
}

void Pipeline::report(const std::string &subject) {
    const PopulationStats stats = load_stats();
    const auto pairs = load_pairs();
    const EvalPair &p = pick(pairs, subject.empty() ? pairs.front().subject_id : subject);
    const fs::path mdir = maps_dir(p.subject_id);
    require_file(mdir / "zscore.vol", "abnormality maps for " + p.subject_id, "map");

    const Volume xh = load_volume(mdir / "reconstruction.vol");
    const AbnormalityMap r = load_map(mdir / "residual.vol");
    const AbnormalityMap z = load_map(mdir / "zscore.vol");
    const auto panels = subject_panels(p.simulated, xh, stats.std, p.mask, r, z, cfg_.anomaly.thresholds,
                                       cfg_.anomaly.mode);
    const fs::path dir = out() / "report" / p.subject_id;
    wrote(write_panels(panels, dir));

    const Volume brain = store().atlas().brain_mask();
    const Volume *domain = cfg_.eval.domain == Domain::brain_only ? &brain : nullptr;
    std::ostringstream os;
    os << "subject " << p.subject_id << " session " << p.session_id << "\n";
    os << "domain " << to_string(cfg_.eval.domain) << ", " << (cfg_.eval.use_magnitude ? "magnitude" : "signed")
       << " maps\n";
    for (const AbnormalityMap *m : {&r, &z}) {
        const Volume v = cfg_.eval.use_magnitude ? abs(m->values) : m->values;
        os << "ncc " << to_string(m->kind) << " " << format_real(ncc(v, p.mask, domain)) << "\n";
    }
    for (double t : cfg_.anomaly.thresholds) {
        const AbnormalityMap th = threshold_map(z, t, cfg_.anomaly.mode);
        os << "zscore threshold " << format_real(t) << " support " << support_size(th.values) << " dice "
           << format_real(dice(th.values, p.mask)) << "\n";
    }
    write_text(dir / "summary.txt", os.str());
    wrote(dir / "summary.txt");
    log_ << "wrote " << panels.size() * 3 << " panels for " << p.subject_id << " to " << dir.string() << "\n";
}

} // namespace

int run(const std::vector<std::string> &args, std::ostream &out, std::ostream &err) {
    CLI::App app{"Unsupervised anomaly maps for brain volumes", "uadmap"};
    app.require_subcommand(1);
    Options o;
    app.add_option("--config", o.config_path, "JSON configuration file");
    app.add_option("--seed", o.seed, "Override the configured seed");
    app.add_option("--out", o.out_dir, "Override the output directory");
    app.add_option("--threads", o.threads, "OpenMP threads (0 = runtime default)")->check(CLI::NonNegativeNumber);

    auto *gen = app.add_subcommand("generate", "Synthesise the phantom cohort");
    auto *spl = app.add_subcommand("split", "Stratified subject-level train/validation/test split");
    auto *trn = app.add_subcommand("train", "Population statistics and reconstructor fit on training CN images");
    trn->add_option("--epochs", o.epochs, "Override train.epochs");
    trn->add_option("--reconstructor", o.reconstructor, "Override train.reconstructor (vae|pca)");
    auto *rec = app.add_subcommand("reconstruct", "Pseudo-healthy reconstructions of test images");
    rec->add_option("--subject", o.subject, "Only this subject");
    auto *sim = app.add_subcommand("simulate", "Simulated hypometabolism pairs from test images");
    sim->add_option("--degree", o.degree, "Override simulate.degree");
    auto *map = app.add_subcommand("map", "Residual, z-score and thresholded maps");
    map->add_option("--subject", o.subject, "Only this subject");
    auto *ev = app.add_subcommand("evaluate", "NCC of maps against simulation masks");
    auto *rep = app.add_subcommand("report", "Slice panels and summary for one subject");
    rep->add_option("--subject", o.subject, "Subject (default: first test subject)");
    for (auto *sc : {ev, map, rep, rec, sim})
        sc->add_option("--reconstructor", o.reconstructor, "Override train.reconstructor (vae|pca)");
    (void)gen;
    (void)spl;

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::CallForHelp &) {
        out << app.help();
        return exit_ok;
    } catch (const CLI::ParseError &e) {
        err << "uadmap: " << e.what() << "\n";
        return e.get_exit_code() == 0 ? exit_ok : exit_usage;
    }
    const std::string command = app.get_subcommands().front()->get_name();

    try {
        PipelineConfig cfg = o.config_path.empty() ? PipelineConfig{} : load_config(o.config_path);
        if (o.seed)
            cfg.seed = *o.seed;
        if (!o.out_dir.empty())
            cfg.paths.out = o.out_dir;
        if (o.epochs)
            cfg.train.optimiser.epochs = *o.epochs;
        if (!o.reconstructor.empty()) {
            if (o.reconstructor == "vae")
                cfg.train.reconstructor = ReconstructorKind::vae;
            else if (o.reconstructor == "pca")
                cfg.train.reconstructor = ReconstructorKind::pca;
            else
                throw ConfigError("train.reconstructor: must be vae|pca, got '" + o.reconstructor + "'");
        }
        if (o.degree)
            cfg.simulate.degree = *o.degree;
        cfg.validate();
        if (o.threads > 0)
            par::set_threads(o.threads);

        Pipeline p(cfg, command, out);
        nlohmann::json margs = nlohmann::json::object();
        if (command == "generate")
            p.generate();
        else if (command == "split")
            p.split();
        else if (command == "train")
            p.train();
        else if (command == "reconstruct")
            p.reconstruct(o.subject);
        else if (command == "simulate")
            p.simulate();
        else if (command == "map")
            p.map(o.subject);
        else if (command == "evaluate")
            p.evaluate();
        else if (command == "report")
            p.report(o.subject);
        if (!o.subject.empty())
            margs["subject"] = o.subject;
        p.write_manifest(margs);
        return exit_ok;
    } catch (const PrerequisiteError &e) {
        err << "uadmap " << command << ": " << e.what() << "\n";
        return exit_prerequisite;
    } catch (const NumericalError &e) {
        err << "uadmap " << command << ": numerical failure: " << e.what() << "\n";
        return exit_numerical;
    } catch (const ConfigError &e) {
        err << "uadmap " << command << ": invalid configuration: " << e.what() << "\n";
        return exit_usage;
    } catch (const std::exception &e) {
        err << "uadmap " << command << ": " << e.what() << "\n";
        return exit_usage;
    }
}

} // namespace uad::cli
