#include <CLI11.hpp>

#include <iostream>
#include <string>
#include <vector>

#include "ccaqed/commands.hpp"

using namespace ccaqed;

namespace {

struct Options {
  std::vector<std::string> configs;
  std::string preset;
  std::string out;
  unsigned threads = default_thread_count();
  bool rwa = false;
  double omega_in = 0.0;
  bool has_omega = false;
};

json effective_config(const Options& o) {
  json j = json::object();
  if (!o.preset.empty()) j = load_preset(o.preset);
  for (const auto& c : o.configs) j.merge_patch(load_json_file(c));
  if (o.rwa) j["model"]["rwa_only"] = true;
  if (o.has_omega) j["scatter"]["omega_in"] = o.omega_in;
  return j;
}

void print_error(const std::string& command, const char* kind, const std::string& msg) {
  json e = {{"error", {{"command", command}, {"kind", kind}, {"message", msg}}}};
  std::cerr << e.dump() << std::endl;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Single-photon scattering through a coupled-cavity array with a two-level atom"};
  app.set_version_flag("--version", std::string(kVersion));
  app.require_subcommand(1);

  Options o;
  using Runner = CommandResult (*)(const RunConfig&, const std::string&);
  const std::pair<const char*, Runner> commands[] = {
      {"bound-states", cmd_bound_states}, {"spectrum", cmd_spectrum}, {"scatter", cmd_scatter},
      {"sweep", cmd_sweep},               {"dark-lines", cmd_dark_lines}, {"validate", cmd_validate}};
  const char* help[] = {"bound-state energies over a g grid",
                        "eigenvalues, parities and localization ratios",
                        "single incident frequency",
                        "frequency/parameter sweeps",
                        "standing-wave modes decoupled from the atom",
                        "run the invariant suite"};
  std::vector<CLI::App*> subs;
  for (std::size_t i = 0; i < std::size(commands); ++i) {
    CLI::App* s = app.add_subcommand(commands[i].first, help[i]);
    s->add_option("--config", o.configs, "JSON configuration file (repeatable, later files override)")
        ->check(CLI::ExistingFile);
    s->add_option("--preset", o.preset, "named built-in configuration");
    s->add_option("--out", o.out, "output directory");
    s->add_option("--threads", o.threads, "worker threads")->check(CLI::PositiveNumber);
    s->add_flag("--rwa", o.rwa, "drop the counter-rotating coupling");
    if (std::string(commands[i].first) == "scatter")
      s->add_option("--omega-in", o.omega_in, "incident photon frequency");
    subs.push_back(s);
  }

  CLI11_PARSE(app, argc, argv);

  for (std::size_t i = 0; i < subs.size(); ++i) {
    if (!subs[i]->parsed()) continue;
    const std::string name = commands[i].first;
    if (auto* opt = subs[i]->get_option_no_throw("--omega-in")) o.has_omega = opt->count() > 0;
    try {
      json j = effective_config(o);
      if (!o.out.empty()) j["output"]["dir"] = o.out;
      json hashed = j;
      if (hashed.contains("output")) hashed["output"].erase("dir");
      const std::string hash = config_hash(hashed);
      const RunConfig rc = parse_config(j, o.threads);
      const CommandResult r = commands[i].second(rc, hash);
      r.files.commit(rc.output.dir);
      std::cout << r.summary << '\n';
      for (const auto& f : r.files.files()) std::cout << "wrote " << rc.output.dir << '/' << f.first << '\n';
      return r.exit_code;
    } catch (const ConfigError& e) {
      print_error(name, e.kind(), e.what());
      return 2;
    } catch (const Error& e) {
      print_error(name, e.kind(), e.what());
      return 3;
    } catch (const std::exception& e) {
      print_error(name, "internal", e.what());
      return 4;
    }
  }
  return 0;
}
