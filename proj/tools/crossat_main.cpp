#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "crossat/config.hpp"
#include "crossat/pipeline.hpp"

namespace {

void print_usage(std::ostream& os) {
  os << "usage: crossat <command> [--config <file>] [key=value ...]\n"
        "\n"
        "commands:\n"
        "  synth   generate a synthetic cross-modal dataset and word vectors\n"
        "  train   fit the shared embedding space on the seen classes\n"
        "  encode  write shared-space embeddings for every record\n"
        "  index   build and export a retrieval gallery\n"
        "  query   print the top-k gallery entries for one record\n"
        "  eval    zero-shot retrieval evaluation (mAP, P@k)\n"
        "  ablate  run the switch grid and tabulate mAP per configuration\n"
        "\n"
        "The config file holds 'key = value' lines ('#' starts a comment);\n"
        "command-line key=value pairs override it. CROSSAT_CONFIG names a\n"
        "default config file. 'crossat keys' lists every key and default.\n";
}

}  // namespace

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  if (args.empty() || args[0] == "--help" || args[0] == "-h" ||
      args[0] == "help") {
    print_usage(args.empty() ? std::cerr : std::cout);
    return args.empty() ? 2 : 0;
  }
  const std::string command = args[0];
  if (command == "keys") {
    for (const std::string& line : crossat::config_key_help()) {
      std::cout << line << "\n";
    }
    return 0;
  }

  std::optional<std::string> config_path;
  if (const char* env = std::getenv("CROSSAT_CONFIG"); env && *env) {
    config_path = env;
  }
  std::vector<std::string> overrides;
  for (std::size_t i = 1; i < args.size(); ++i) {
    if (args[i] == "--config") {
      if (i + 1 >= args.size()) {
        std::cerr << "error: --config needs a file path\n";
        return 2;
      }
      config_path = args[++i];
    } else if (args[i] == "--help" || args[i] == "-h") {
      print_usage(std::cout);
      return 0;
    } else {
      overrides.push_back(args[i]);
    }
  }

  try {
    const crossat::RunConfig config =
        crossat::parse_config(config_path, overrides);
    return crossat::run_command(command, config, std::cout, std::cerr);
  } catch (const crossat::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const crossat::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
