// tsepi command line: data synthesis, both training stages, evaluation,
// extraction and filterbank inspection.

#include <cmath>
#include <complex>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <unsupported/Eigen/FFT>

#include "tsepi/checkpoint.hpp"
#include "tsepi/config.hpp"
#include "tsepi/dataset.hpp"
#include "tsepi/gtfb.hpp"
#include "tsepi/training.hpp"
#include "tsepi/wav.hpp"

namespace fs = std::filesystem;
using namespace tsepi;

namespace {

struct Common {
  std::string config;
  std::string preset = "desk";
  std::string run_dir;
  long max_steps = -1;
  int overfit = -1;
  bool verbose = false;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "JSON run config");
  cmd->add_option("--preset", c.preset, "desk or paper")->check(CLI::IsMember({"desk", "paper"}));
  cmd->add_option("--run-dir", c.run_dir, "output directory");
  cmd->add_option("--max-steps", c.max_steps, "stop after this many optimizer steps");
  cmd->add_option("--overfit", c.overfit, "train on the first N examples only");
  cmd->add_flag("-v,--verbose", c.verbose, "echo log lines to stderr");
}

RunConfig resolve(const Common& c, const std::string& stage) {
  RunConfig cfg = load_config(c.config, c.preset);
  cfg.stage = stage;
  if (!c.run_dir.empty()) cfg.run_dir = c.run_dir;
  if (c.overfit >= 0) cfg.overfit = c.overfit;
  if (c.max_steps >= 0) {
    cfg.pitch_optim.max_steps = c.max_steps;
    cfg.tse_optim.max_steps = c.max_steps;
  }
  return cfg;
}

int run_synth(const std::string& split, std::size_t num, std::uint64_t seed, const std::string& out, double seconds,
              int sources, double noise_snr, const std::vector<int>& classes, bool save_rirs) {
  SynthOptions o;
  o.split = split;
  o.num = num;
  o.seed = seed;
  if (const char* s = std::getenv("TSEPI_SEED"); s && *s) {
    RunConfig tmp;
    apply_env(tmp);
    o.seed = tmp.seed;
  }
  o.recipe.seconds = seconds;
  o.recipe.n_sources = sources;
  o.recipe.noise_snr_db = noise_snr;
  o.recipe.classes = classes;
  o.save_rirs = save_rirs;
  const auto records = synth_dataset(out, o);
  std::cout << "wrote " << records.size() << " samples to " << (fs::path(out) / "manifest.jsonl").string() << '\n';
  return 0;
}

int run_train_pitch(const Common& c, const std::string& train, const std::string& val, const std::string& resume) {
  RunConfig cfg = resolve(c, "pitch");
  if (!train.empty()) cfg.train_manifest = train;
  if (!val.empty()) cfg.val_manifest = val;
  cfg.validate();
  cfg.check_paths();
  write_resolved_config(cfg, cfg.run_dir);
  const auto tr = make_pitch_data(load_manifest(cfg.train_manifest, cfg.grid), cfg.pitch_net);
  PitchData va;
  if (!cfg.val_manifest.empty()) va = make_pitch_data(load_manifest(cfg.val_manifest, cfg.grid), cfg.pitch_net);
  TrainOptions t{cfg.run_dir, resume, c.verbose};
  const auto res = train_pitch(cfg, tr, cfg.val_manifest.empty() ? nullptr : &va, t);
  std::cout << "pitch checkpoint: " << res.checkpoint.string() << " (step " << res.state.step << ")\n";
  return 0;
}

int run_train_tse(const Common& c, const std::string& train, const std::string& val, const std::string& resume,
                  const std::string& pitch_ckpt, bool sweep, double snr_w, double si_w) {
  RunConfig cfg = resolve(c, "tse");
  if (!train.empty()) cfg.train_manifest = train;
  if (!val.empty()) cfg.val_manifest = val;
  if (!pitch_ckpt.empty()) {
    cfg.pitch_source = PitchSource::Checkpoint;
    cfg.pitch_checkpoint = pitch_ckpt;
  }
  if (snr_w >= 0.0 || si_w >= 0.0) {
    cfg.loss.snr = snr_w >= 0.0 ? snr_w : 1.0 - si_w;
    cfg.loss.si_snr = si_w >= 0.0 ? si_w : 1.0 - snr_w;
  }
  cfg.validate();
  cfg.check_paths();
  write_resolved_config(cfg, cfg.run_dir);

  std::unique_ptr<PitchNet<Real>> pnet;
  if (cfg.pitch_source == PitchSource::Checkpoint) {
    pnet = std::make_unique<PitchNet<Real>>(ckpt::load_pitch<Real>(cfg.pitch_checkpoint));
    check_pitch_compat(*pnet, cfg);
  }
  const auto tr = make_tse_data(load_manifest(cfg.train_manifest, cfg.grid), cfg.grid, pnet.get(),
                                cfg.unvoiced_threshold);
  TseData va;
  if (!cfg.val_manifest.empty())
    va = make_tse_data(load_manifest(cfg.val_manifest, cfg.grid), cfg.grid, pnet.get(), cfg.unvoiced_threshold);
  const TseData* vp = cfg.val_manifest.empty() ? nullptr : &va;
  TrainOptions t{cfg.run_dir, resume, c.verbose};
  if (sweep) {
    const auto rows = loss_sweep(cfg, tr, vp, t);
    json out = rows;
    std::ofstream f(fs::path(cfg.run_dir) / "loss_sweep.json");
    f << out.dump(2) << '\n';
    std::cout << out.dump(2) << '\n';
    return 0;
  }
  const auto res = train_tse(cfg, tr, vp, t);
  std::cout << "tse checkpoint: " << res.checkpoint.string() << " (step " << res.state.step << ")\n";
  return 0;
}

int run_eval(const Common& c, const std::string& manifest, const std::string& pitch_ckpt, const std::string& tse_ckpt,
             const std::string& out, bool oracle, double threshold) {
  RunConfig cfg = resolve(c, "eval");
  if (!manifest.empty()) cfg.test_manifest = manifest;
  if (threshold >= 0.0) cfg.unvoiced_threshold = threshold;
  cfg.validate();
  cfg.check_paths();
  std::unique_ptr<PitchNet<Real>> pnet;
  std::unique_ptr<TSENet<Real>> tnet;
  if (!oracle) {
    require(!pitch_ckpt.empty() && !tse_ckpt.empty(), "eval: --pitch-ckpt and --tse-ckpt are required");
    pnet = std::make_unique<PitchNet<Real>>(ckpt::load_pitch<Real>(pitch_ckpt));
    tnet = std::make_unique<TSENet<Real>>(ckpt::load_tse<Real>(tse_ckpt));
    cfg.grid = pnet->grid();
  }
  const fs::path dir = out.empty() ? fs::path(cfg.run_dir) : fs::path(out);
  write_resolved_config(cfg, dir);
  const auto examples = load_manifest(cfg.test_manifest, cfg.grid);
  EvalOptions eo{cfg.unvoiced_threshold, oracle};
  const json report = evaluate(examples, pnet.get(), tnet.get(), cfg.grid, eo, dir);
  std::cout << report["global"].dump(2) << '\n';
  return 0;
}

int run_extract(const std::string& mix, int label, const std::string& pitch_ckpt, const std::string& tse_ckpt,
                const std::string& out, const std::string& pitch_out, double threshold) {
  const auto pnet = ckpt::load_pitch<Real>(pitch_ckpt);
  const auto tnet = ckpt::load_tse<Real>(tse_ckpt);
  require(pnet.grid().n_classes() == tnet.config().pitch_classes, "extract: pitch grids of the stages differ");
  AudioClip clip = wav::read(mix);
  if (clip.sample_rate != tnet.config().sample_rate) clip = resample(clip, tnet.config().sample_rate);
  const PitchSequence pitch = predict_pitch(pnet, clip, label, threshold);
  const AudioClip est = tnet.extract(clip, label, pitch);
  wav::write(out, est);
  if (!pitch_out.empty()) write_pitch_csv(pitch_out, pitch, pnet.grid());
  std::cout << "wrote " << out << '\n';
  return 0;
}

int run_inspect_gtfb(const std::string& tse_ckpt, int filters, int length, const std::string& out, int n_fft) {
  require(n_fft >= 2 * length && (n_fft & (n_fft - 1)) == 0, "inspect-gtfb: --fft must be a power of two >= 2L");
  gtfb::GammatoneParams p;
  int fs_rate = kWorkingRate;
  if (!tse_ckpt.empty()) {
    auto net = ckpt::load_tse<double>(tse_ckpt);
    require(net.gammatone() != nullptr, "inspect-gtfb: checkpoint uses a conv encoder, not a gammatone bank");
    p = net.gammatone()->params();
    fs_rate = net.config().sample_rate;
  } else {
    p = gtfb::GammatoneParams::standard(filters, length, fs_rate);
  }
  const Eigen::MatrixXd k = gtfb::build_kernels(p, fs_rate);
  fs::create_directories(out);
  std::ofstream params(fs::path(out) / "gtfb_params.csv");
  std::ofstream resp(fs::path(out) / "gtfb_response.csv");
  if (!params || !resp) fail(ErrorCode::Io, "inspect-gtfb: cannot write into " + out);
  params << "filter,fc_hz,bandwidth_hz,bw_scale,amp,phase,peak_hz\n";
  resp << "filter,freq_hz,magnitude_db\n";
  Eigen::FFT<double> fft;
  std::vector<double> buf(static_cast<std::size_t>(n_fft));
  std::vector<std::complex<double>> spec;
  for (Eigen::Index f = 0; f < k.cols(); ++f) {
    std::fill(buf.begin(), buf.end(), 0.0);
    for (Eigen::Index t = 0; t < k.rows(); ++t) buf[static_cast<std::size_t>(t)] = k(t, f);
    fft.fwd(spec, buf);
    int peak = 0;
    for (int b = 0; b <= n_fft / 2; ++b)
      if (std::abs(spec[static_cast<std::size_t>(b)]) > std::abs(spec[static_cast<std::size_t>(peak)])) peak = b;
    const auto i = static_cast<std::size_t>(f);
    params << f << ',' << p.fc[i] << ',' << p.bw_scale[i] * gtfb::erb(p.fc[i]) << ',' << p.bw_scale[i] << ','
           << p.amp[i] << ',' << p.phase[i] << ',' << static_cast<double>(peak) * fs_rate / n_fft << '\n';
    for (int b = 0; b <= n_fft / 2; ++b) {
      const double mag = std::abs(spec[static_cast<std::size_t>(b)]);
      resp << f << ',' << static_cast<double>(b) * fs_rate / n_fft << ',' << 20.0 * std::log10(mag + 1e-12) << '\n';
    }
  }
  std::cout << "wrote " << k.cols() << " filters to " << out << '\n';
  return 0;
}

void print_error(std::string_view code, const std::string& message) {
  std::string flat = message;
  for (char& ch : flat)
    if (ch == '\n' || ch == '\r') ch = ' ';
  std::cerr << "error: code=" << code << " message=" << flat << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"pitch-informed target sound extraction"};
  app.require_subcommand(1);
  Common common;

  auto* synth = app.add_subcommand("synth-data", "synthesize a labeled mixture dataset");
  std::string split = "train", out;
  std::size_t num = 200;
  std::uint64_t seed = 17;
  double seconds = 4.0, noise_snr = 40.0;
  int sources = 2;
  std::vector<int> classes;
  bool save_rirs = false;
  synth->add_option("--split", split, "split name (seeds differ per split)");
  synth->add_option("--num", num, "number of mixtures");
  synth->add_option("--seed", seed, "base seed (TSEPI_SEED overrides)");
  synth->add_option("--out", out, "output directory")->required();
  synth->add_option("--seconds", seconds, "clip length");
  synth->add_option("--sources", sources, "sources per mixture (1-4)");
  synth->add_option("--noise-snr", noise_snr, "noise floor SNR in dB (inf disables)");
  synth->add_option("--classes", classes, "restrict to these class ids");
  synth->add_flag("--save-rirs", save_rirs, "also write RIR cache files");

  auto* tp = app.add_subcommand("train-pitch", "train the conditional pitch extractor");
  std::string train, val, resume;
  add_common(tp, common);
  tp->add_option("--train", train, "training manifest");
  tp->add_option("--val", val, "validation manifest");
  tp->add_option("--resume", resume, "checkpoint to resume from");

  auto* tt = app.add_subcommand("train-tse", "train the extraction network");
  std::string pitch_from;
  bool sweep = false;
  double snr_w = -1.0, si_w = -1.0;
  add_common(tt, common);
  tt->add_option("--train", train, "training manifest");
  tt->add_option("--val", val, "validation manifest");
  tt->add_option("--resume", resume, "checkpoint to resume from");
  tt->add_option("--pitch-from-checkpoint", pitch_from, "use stage-1 predictions from this checkpoint");
  tt->add_flag("--loss-sweep", sweep, "train once per configured loss-weight pair");
  tt->add_option("--snr-weight", snr_w, "SNR term weight");
  tt->add_option("--si-snr-weight", si_w, "SI-SNR term weight");

  auto* ev = app.add_subcommand("eval", "two-stage evaluation");
  std::string manifest, pitch_ckpt, tse_ckpt, eval_out;
  bool oracle = false;
  double threshold = -1.0;
  add_common(ev, common);
  ev->add_option("--manifest", manifest, "test manifest");
  ev->add_option("--pitch-ckpt", pitch_ckpt, "stage-1 checkpoint");
  ev->add_option("--tse-ckpt", tse_ckpt, "stage-2 checkpoint");
  ev->add_option("--out", eval_out, "report directory (default: run dir)");
  ev->add_flag("--oracle", oracle, "score the reference itself (harness check)");
  ev->add_option("--threshold", threshold, "unvoiced posterior threshold");

  auto* ex = app.add_subcommand("extract", "extract one target from a mixture file");
  std::string mix, est_out, pitch_out;
  int label = 0;
  double ex_threshold = 0.0;
  ex->add_option("--mix", mix, "mixture WAV")->required();
  ex->add_option("--class", label, "target class id")->required();
  ex->add_option("--pitch-ckpt", pitch_ckpt, "stage-1 checkpoint")->required();
  ex->add_option("--tse-ckpt", tse_ckpt, "stage-2 checkpoint")->required();
  ex->add_option("--out", est_out, "output WAV")->required();
  ex->add_option("--pitch-out", pitch_out, "also write the predicted pitch CSV");
  ex->add_option("--threshold", ex_threshold, "unvoiced posterior threshold");

  auto* ig = app.add_subcommand("inspect-gtfb", "dump gammatone filter parameters and responses");
  int filters = 512, length = 32, n_fft = 4096;
  std::string ig_out;
  ig->add_option("--tse-ckpt", tse_ckpt, "read the bank from this checkpoint");
  ig->add_option("--filters", filters, "filters in a fresh bank");
  ig->add_option("--length", length, "kernel length of a fresh bank");
  ig->add_option("--fft", n_fft, "FFT size for magnitude responses");
  ig->add_option("--out", ig_out, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    print_error(to_string(ErrorCode::InvalidArgument), e.what());
    return exit_status(ErrorCode::InvalidArgument);
  }

  try {
    if (*synth) return run_synth(split, num, seed, out, seconds, sources, noise_snr, classes, save_rirs);
    if (*tp) return run_train_pitch(common, train, val, resume);
    if (*tt) return run_train_tse(common, train, val, resume, pitch_from, sweep, snr_w, si_w);
    if (*ev) return run_eval(common, manifest, pitch_ckpt, tse_ckpt, eval_out, oracle, threshold);
    if (*ex) return run_extract(mix, label, pitch_ckpt, tse_ckpt, est_out, pitch_out, ex_threshold);
    if (*ig) return run_inspect_gtfb(tse_ckpt, filters, length, ig_out, n_fft);
  } catch (const Error& e) {
    print_error(to_string(e.code()), e.what());
    return exit_status(e.code());
  } catch (const fs::filesystem_error& e) {
    print_error(to_string(ErrorCode::Io), e.what());
    return exit_status(ErrorCode::Io);
  } catch (const std::exception& e) {
    print_error("internal", e.what());
    return 1;
  }
  return 0;
}
