#pragma once

// CLI11 config reader for JSON files. Top-level keys are global options,
// nested objects are subcommand sections:
//   {"seed": 3, "train": {"nr-alpha": 5, "lambda": 0.01}}

#include <functional>
#include <istream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

namespace hybridid::cli {

class JsonConfig : public CLI::Config {
 public:
  std::string to_config(const CLI::App* app, bool default_also, bool, std::string) const override {
    nlohmann::json out = nlohmann::json::object();
    for (const CLI::Option* opt : app->get_options()) {
      if (!opt->get_configurable() || opt->get_lnames().empty()) continue;
      const auto res = opt->results();
      if (!res.empty())
        out[opt->get_lnames().front()] = res.size() == 1 ? nlohmann::json(res.front()) : nlohmann::json(res);
      else if (default_also && !opt->get_default_str().empty())
        out[opt->get_lnames().front()] = opt->get_default_str();
    }
    return out.dump(2) + "\n";
  }

  std::vector<CLI::ConfigItem> from_config(std::istream& input) const override {
    nlohmann::json root;
    try {
      root = nlohmann::json::parse(input);
    } catch (const nlohmann::json::exception& e) {
      throw CLI::ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    if (!root.is_object()) throw CLI::ConfigError("config must be a JSON object");
    std::vector<CLI::ConfigItem> items;
    std::function<void(const nlohmann::json&, const std::vector<std::string>&)> walk =
        [&](const nlohmann::json& obj, const std::vector<std::string>& parents) {
          for (const auto& [key, value] : obj.items()) {
            if (value.is_object()) {
              auto sub = parents;
              sub.push_back(key);
              walk(value, sub);
              continue;
            }
            CLI::ConfigItem item;
            item.parents = parents;
            item.name = key;
            if (value.is_array())
              for (const auto& v : value) item.inputs.push_back(scalar(v, key));
            else
              item.inputs.push_back(scalar(value, key));
            items.push_back(std::move(item));
          }
        };
    walk(root, {});
    return items;
  }

 private:
  static std::string scalar(const nlohmann::json& v, const std::string& key) {
    if (v.is_string()) return v.get<std::string>();
    if (v.is_number() || v.is_boolean()) return v.dump();
    throw CLI::ConfigError("config key '" + key + "' must hold a string, number, boolean or list");
  }
};

}  // namespace hybridid::cli
