#include "neurotopo/checkpoint.hpp"
#include "neurotopo/error.hpp"
#include "neurotopo/fileio.hpp"
#include "neurotopo/gradcheck.hpp"
#include "neurotopo/montage.hpp"
#include "neurotopo/pipeline.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <set>

namespace fs = std::filesystem;
using namespace neurotopo;

namespace {

// Remembers what existed before a stage so anything it created can be
// removed if it fails.
class OutputGuard {
 public:
  void watch(const fs::path& p) {
    Watched w{p, fs::exists(p), {}};
    if (w.existed && fs::is_directory(p)) {
      for (const auto& e : fs::recursive_directory_iterator(p)) w.before.insert(e.path());
    }
    watched_.push_back(std::move(w));
  }

  void rollback() const noexcept {
    std::error_code ec;
    for (const auto& w : watched_) {
      if (!w.existed) {
        fs::remove_all(w.path, ec);
        continue;
      }
      if (!fs::is_directory(w.path, ec)) continue;
      std::vector<fs::path> created;
      for (auto it = fs::recursive_directory_iterator(w.path, ec); !ec && it != fs::recursive_directory_iterator(); it.increment(ec)) {
        if (!w.before.count(it->path())) created.push_back(it->path());
      }
      for (const auto& p : created) fs::remove_all(p, ec);
    }
  }

 private:
  struct Watched {
    fs::path path;
    bool existed;
    std::set<fs::path> before;
  };
  std::vector<Watched> watched_;
};

int fail(const std::string& stage, const std::string& code, const std::string& message) {
  std::cerr << "ERROR:" << stage << ':' << code << ':' << message << '\n';
  return 1;
}

void print_report(const Report& r) { std::cout << r.json; }

} // namespace

int main(int argc, char** argv) {
  CLI::App app{"EEG motor-activity topogram toolkit"};
  app.require_subcommand(1);
  app.fallthrough();
  int threads = 1;
  app.add_option("--threads", threads, "Worker threads for image generation")->check(CLI::PositiveNumber);
  app.set_version_flag("--version",
                       std::string("neurotopo ") + kVersion + "\ncheckpoint " + kCheckpointMagic +
                           "\nimages PGM P5\nmanifest JSON-lines v1");

  OutputGuard guard;
  std::function<void()> action;

  auto* synth = app.add_subcommand("synth", "Generate synthetic EEG trials");
  SynthConfig synth_cfg;
  fs::path synth_out;
  synth->add_option("--subjects", synth_cfg.n_subjects)->capture_default_str();
  synth->add_option("--trials-per-hand", synth_cfg.trials_per_hand)->capture_default_str();
  synth->add_option("--seed", synth_cfg.seed)->capture_default_str();
  synth->add_option("--out", synth_out)->required();
  synth->callback([&] {
    action = [&] {
      guard.watch(synth_out);
      std::cout << "wrote " << synth_stage(synth_cfg, synth_out) << " trials to " << synth_out.string() << '\n';
    };
  });

  auto* pre = app.add_subcommand("preprocess", "Notch and band-pass filter trial files");
  fs::path pre_in, pre_out, dump;
  pre->add_option("--in", pre_in)->required();
  pre->add_option("--out", pre_out)->required();
  pre->add_option("--dump-filters", dump, "Write filter coefficients as CSV");
  pre->callback([&] {
    action = [&] {
      guard.watch(pre_out);
      if (!dump.empty()) guard.watch(dump);
      const auto n = preprocess_stage(pre_in, pre_out, DspConfig{}, dump.empty() ? std::nullopt : std::optional(dump));
      std::cout << "filtered " << n << " trials into " << pre_out.string() << '\n';
    };
  });

  auto* ds = app.add_subcommand("dataset", "Render topograms and write the manifest");
  fs::path ds_in, ds_out;
  DatasetOptions ds_opt;
  ds->add_option("--in", ds_in)->required();
  ds->add_option("--out", ds_out)->required();
  ds->add_option("--seed", ds_opt.seed)->capture_default_str();
  ds->callback([&] {
    action = [&] {
      guard.watch(ds_out);
      ds_opt.threads = threads;
      const auto m = dataset_stage(ds_in, ds_out, ds_opt);
      std::cout << m.entries.size() << " images (" << m.count(Split::Train) << " train, " << m.count(Split::Test)
                << " test) in " << ds_out.string() << '\n';
    };
  });

  auto* tc = app.add_subcommand("train-cnn", "Train the CNN classifier");
  CnnConfig cnn_cfg;
  fs::path tc_manifest, tc_out, tc_report;
  tc->add_option("--manifest", tc_manifest)->required();
  tc->add_option("--epochs", cnn_cfg.epochs)->capture_default_str();
  tc->add_option("--seed", cnn_cfg.seed)->capture_default_str();
  tc->add_option("--out", tc_out)->required();
  tc->add_option("--report", tc_report)->required();
  tc->callback([&] {
    action = [&] {
      for (const auto& p : {tc_out, tc_report, confusion_csv_path(tc_report), confusion_pgm_path(tc_report)}) guard.watch(p);
      print_report(train_cnn_stage(tc_manifest, cnn_cfg, tc_out, tc_report));
    };
  });

  auto* ec = app.add_subcommand("eval-cnn", "Evaluate a CNN checkpoint on the test split");
  fs::path ec_model, ec_manifest, ec_report;
  ec->add_option("--model", ec_model)->required();
  ec->add_option("--manifest", ec_manifest)->required();
  ec->add_option("--report", ec_report)->required();
  ec->callback([&] {
    action = [&] {
      for (const auto& p : {ec_report, confusion_csv_path(ec_report), confusion_pgm_path(ec_report)}) guard.watch(p);
      print_report(eval_cnn_stage(ec_model, ec_manifest, ec_report));
    };
  });

  auto* ta = app.add_subcommand("train-aae", "Train the adversarial autoencoder on one class");
  AaeConfig aae_cfg;
  fs::path ta_manifest, ta_out, ta_report;
  ta->add_option("--manifest", ta_manifest)->required();
  ta->add_option("--epochs", aae_cfg.epochs)->capture_default_str();
  ta->add_option("--normal-class", aae_cfg.normal_class)->capture_default_str();
  ta->add_option("--labeled-fraction", aae_cfg.labeled_fraction)->capture_default_str();
  ta->add_option("--seed", aae_cfg.seed)->capture_default_str();
  ta->add_option("--out", ta_out)->required();
  ta->add_option("--report", ta_report, "Write the per-epoch loss history as JSON");
  ta->callback([&] {
    action = [&] {
      guard.watch(ta_out);
      if (!ta_report.empty()) guard.watch(ta_report);
      const auto h = train_aae_stage(ta_manifest, aae_cfg, ta_out, ta_report.empty() ? std::nullopt : std::optional(ta_report));
      const auto& last = h.epochs.back();
      std::printf("epochs %zu lossD %.6g lossG %.6g\n", h.epochs.size(), last.loss_d, last.loss_g);
    };
  });

  auto* ea = app.add_subcommand("eval-aae", "Evaluate an autoencoder checkpoint on the test split");
  fs::path ea_model, ea_manifest, ea_report;
  ea->add_option("--model", ea_model)->required();
  ea->add_option("--manifest", ea_manifest)->required();
  ea->add_option("--report", ea_report)->required();
  ea->callback([&] {
    action = [&] {
      for (const auto& p : {ea_report, confusion_csv_path(ea_report), confusion_pgm_path(ea_report)}) guard.watch(p);
      print_report(eval_aae_stage(ea_model, ea_manifest, ea_report));
    };
  });

  auto* gc = app.add_subcommand("gradcheck", "Finite-difference check of every tensor op");
  int gc_seeds = 20;
  gc->add_option("--seeds", gc_seeds)->capture_default_str()->check(CLI::PositiveNumber);
  int gc_status = 0;
  gc->callback([&] {
    action = [&] {
      std::printf("%-16s %6s %14s\n", "op", "seeds", "max_rel_err");
      for (const auto& row : run_gradcheck(gc_seeds)) {
        std::printf("%-16s %6d %14.3e\n", row.op.c_str(), row.seeds, row.max_rel_error);
        if (!(row.max_rel_error < 1e-4)) gc_status = 1;
      }
      if (gc_status) throw DomainError("gradcheck", "relative error above 1e-4");
    };
  });

  auto* all = app.add_subcommand("all", "Run every stage from one config");
  fs::path all_config, all_out;
  all->add_option("--config", all_config)->required();
  all->add_option("--out", all_out)->required();
  all->callback([&] {
    action = [&] {
      const auto cfg = load_pipeline_config(all_config);
      guard.watch(all_out);
      run_all(cfg, all_out, threads);
      std::cout << "pipeline finished in " << all_out.string() << '\n';
    };
  });

  auto* mt = app.add_subcommand("montage", "Export the electrode montage as CSV");
  fs::path mt_out;
  mt->add_option("--out", mt_out)->required();
  mt->callback([&] {
    action = [&] {
      guard.watch(mt_out);
      write_file(mt_out, montage_csv(builtin_montage32()));
    };
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ExtrasError& e) {
    return fail("cli", "badflag", e.what());
  } catch (const CLI::ParseError& e) {
    return fail("cli", "usage", e.what());
  }

  try {
    action();
    return 0;
  } catch (const Error& e) {
    guard.rollback();
    return fail(e.stage(), e.code(), e.what());
  } catch (const fs::filesystem_error& e) {
    guard.rollback();
    return fail("io", "io", e.what());
  } catch (const std::exception& e) {
    guard.rollback();
    return fail("internal", "exception", e.what());
  }
}
