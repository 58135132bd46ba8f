#include "clm/ablation.hpp"

#include <cstdio>
#include <sstream>

namespace clm {

std::string AblationResult::to_csv() const {
  std::ostringstream out;
  out << "variant,accuracy,precision,recall,f1,delta_f1\n";
  char buf[64];
  auto num = [&buf](double v) {
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return std::string(buf);
  };
  for (const auto& r : rows) {
    out << variant_name(r.variant);
    if (r.report) {
      out << ',' << num(r.report->accuracy) << ',' << num(r.report->macro_precision) << ','
          << num(r.report->macro_recall) << ',' << num(r.report->macro_f1);
    } else {
      out << ",,,,";
    }
    out << ',' << (r.delta_f1 ? num(*r.delta_f1) : std::string()) << '\n';
  }
  return out.str();
}

nlohmann::ordered_json AblationResult::to_json() const {
  nlohmann::ordered_json j;
  j["held_out"] = language_name(held_out);
  char hash[17];
  std::snprintf(hash, sizeof hash, "%016llx", static_cast<unsigned long long>(split_hash));
  j["split_hash"] = hash;
  auto rs = nlohmann::ordered_json::array();
  for (const auto& r : rows) {
    nlohmann::ordered_json e;
    e["variant"] = variant_name(r.variant);
    e["report"] = r.report ? r.report->to_json() : nlohmann::ordered_json();
    e["delta_f1"] = r.delta_f1 ? nlohmann::ordered_json(*r.delta_f1) : nlohmann::ordered_json();
    auto prov = nlohmann::ordered_json::array();
    for (const auto& p : r.provenance) {
      nlohmann::ordered_json pj;
      pj["phase"] = p.phase;
      std::vector<std::string> langs;
      for (Language l : p.labeled_languages) langs.push_back(language_name(l));
      pj["labeled_languages"] = langs;
      prov.push_back(std::move(pj));
    }
    e["provenance"] = std::move(prov);
    e["error"] = r.error.empty() ? nlohmann::ordered_json() : nlohmann::ordered_json(r.error);
    rs.push_back(std::move(e));
  }
  j["rows"] = std::move(rs);
  return j;
}

AblationResult ablation_suite(const AblationInput& in) {
  AblationResult result;
  result.split_hash = in.split_hash;
  result.held_out = in.held_out;
  const auto held_out_view = language_view(in.test, in.held_out);
  const ModelParams init = init_model(in.model, in.init_seed);

  auto finish = [&](Variant v, const ModelParams& params, std::vector<Provenance> prov) {
    AblationRow row;
    row.variant = v;
    row.provenance = std::move(prov);
    EvalReport r = evaluate(params, in.model, held_out_view, language_name(in.held_out));
    r.zero_shot = true;
    row.report = std::move(r);
    result.rows.push_back(std::move(row));
  };
  auto fail = [&](Variant v, const std::string& what) {
    AblationRow row;
    row.variant = v;
    row.error = what;
    result.rows.push_back(std::move(row));
  };

  try {
    ModelParams p = init;
    const PhaseReport r2 = run_phase(2, p, in.data, in.model, in.train);
    finish(Variant::V1, p, {provenance_of(r2)});
  } catch (const Error& e) {
    fail(Variant::V1, e.what());
  }

  ModelParams p = init;
  std::vector<Provenance> prov;
  const std::array<Variant, 3> chained{Variant::V2, Variant::V3, Variant::V4};
  std::size_t done = 0;
  try {
    prov.push_back(provenance_of(run_phase(1, p, in.data, in.model, in.train)));
    prov.push_back(provenance_of(run_phase(2, p, in.data, in.model, in.train)));
    finish(Variant::V2, p, prov);
    ++done;
    prov.push_back(provenance_of(run_phase(3, p, in.data, in.model, in.train)));
    finish(Variant::V3, p, prov);
    ++done;
    prov.push_back(provenance_of(run_meta_phase(p, in.data, in.model, in.train, in.meta)));
    finish(Variant::V4, p, prov);
    ++done;
  } catch (const Error& e) {
    for (std::size_t k = done; k < chained.size(); ++k) fail(chained[k], e.what());
  }

  for (std::size_t i = 1; i < result.rows.size(); ++i) {
    const auto& prev = result.rows[i - 1].report;
    const auto& cur = result.rows[i].report;
    if (prev && cur) result.rows[i].delta_f1 = cur->macro_f1 - prev->macro_f1;
  }
  return result;
}

}  // namespace clm
