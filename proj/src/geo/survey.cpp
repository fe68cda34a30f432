#include "nbhd/geo/survey.hpp"

#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>
#include <json.hpp>
#include <spdlog/spdlog.h>

#include <chrono>
#include <cmath>
#include <thread>

#include "nbhd/core/error.hpp"
#include "nbhd/core/table.hpp"

namespace nbhd::geo {

namespace {

using json = nlohmann::json;

std::optional<double> cell_value(const json& cell, const std::string& field,
                                 const std::string& where) {
  if (cell.is_null()) return std::nullopt;
  double v = 0.0;
  if (cell.is_number()) {
    v = cell.get<double>();
  } else if (cell.is_string()) {
    const std::string s = cell.get<std::string>();
    if (s.empty() || s == "null" || s == "N" || s == "-") return std::nullopt;
    try {
      v = parse_double(s, field);
    } catch (const ParseError&) {
      throw ParseError(where + ": field '" + field + "' has non-numeric value '" + s + "'");
    }
  } else {
    throw ParseError(where + ": field '" + field + "' has unexpected JSON type");
  }
  if (!std::isfinite(v)) {
    throw ParseError(where + ": field '" + field + "' is not finite");
  }
  if (is_jam_value(v) || v < 0.0) return std::nullopt;
  return v;
}

}  // namespace

std::string SurveyRow::invariant_violation() const {
  if (population_25plus && total_population && *population_25plus > *total_population) {
    return "population_25plus exceeds total_population";
  }
  if (population_25plus && bachelors && masters && professional && doctorate &&
      *bachelors + *masters + *professional + *doctorate > *population_25plus) {
    return "degree counts exceed population_25plus";
  }
  return {};
}

std::vector<std::string> SurveyVariables::codes() const {
  return {total_population, population_25plus, median_household_income, bachelors,
          masters,          professional,      doctorate};
}

bool is_jam_value(double v) {
  // Documented annotation values for ACS estimates.
  static constexpr double kJam[] = {-111111111.0, -222222222.0, -333333333.0, -555555555.0,
                                    -666666666.0, -888888888.0, -999999999.0};
  for (double j : kJam) {
    if (v == j) return true;
  }
  return false;
}

std::vector<SurveyRow> parse_survey_response(const std::string& body,
                                             const SurveyVariables& vars, int year,
                                             const std::string& source) {
  json doc;
  try {
    doc = json::parse(body);
  } catch (const json::parse_error& e) {
    throw ParseError(source + ": response is not JSON: " + e.what());
  }
  if (!doc.is_array() || doc.empty() || !doc[0].is_array()) {
    throw ParseError(source + ": expected an array of arrays with a header row");
  }
  std::map<std::string, std::size_t> col;
  for (std::size_t i = 0; i < doc[0].size(); ++i) {
    if (!doc[0][i].is_string()) throw ParseError(source + ": header cell " + std::to_string(i) + " is not a string");
    col[doc[0][i].get<std::string>()] = i;
  }
  auto need = [&](const std::string& name) {
    auto it = col.find(name);
    if (it == col.end()) throw ParseError(source + ": response lacks field '" + name + "'");
    return it->second;
  };
  const std::size_t c_state = need("state");
  const std::size_t c_county = need("county");
  const std::size_t c_tract = need("tract");
  const std::size_t c_bg = need("block group");
  const std::size_t c_pt = need(vars.total_population);
  const std::size_t c_p25 = need(vars.population_25plus);
  const std::size_t c_mhi = need(vars.median_household_income);
  const std::size_t c_b = need(vars.bachelors);
  const std::size_t c_m = need(vars.masters);
  const std::size_t c_p = need(vars.professional);
  const std::size_t c_d = need(vars.doctorate);

  std::vector<SurveyRow> rows;
  for (std::size_t r = 1; r < doc.size(); ++r) {
    const auto& a = doc[r];
    const std::string where = source + ": row " + std::to_string(r);
    if (!a.is_array() || a.size() != doc[0].size()) {
      throw ParseError(where + ": wrong number of cells");
    }
    auto str = [&](std::size_t c, const char* name) {
      if (!a[c].is_string()) throw ParseError(where + ": field '" + name + "' is not a string");
      return a[c].get<std::string>();
    };
    SurveyRow row;
    row.geoid = str(c_state, "state") + str(c_county, "county") + str(c_tract, "tract") +
                str(c_bg, "block group");
    if (row.geoid.size() != 12) {
      throw ParseError(where + ": geography fields do not form a 12-character GEOID ('" +
                       row.geoid + "')");
    }
    row.total_population = cell_value(a[c_pt], vars.total_population, where);
    row.population_25plus = cell_value(a[c_p25], vars.population_25plus, where);
    row.median_household_income = cell_value(a[c_mhi], vars.median_household_income, where);
    row.bachelors = cell_value(a[c_b], vars.bachelors, where);
    row.masters = cell_value(a[c_m], vars.masters, where);
    row.professional = cell_value(a[c_p], vars.professional, where);
    row.doctorate = cell_value(a[c_d], vars.doctorate, where);
    row.year = year;
    rows.push_back(std::move(row));
  }
  std::sort(rows.begin(), rows.end(), [](const auto& l, const auto& r) { return l.geoid < r.geoid; });
  return rows;
}

std::string render_survey_response(const std::vector<SurveyRow>& rows,
                                   const SurveyVariables& vars) {
  json doc = json::array();
  json header = json::array();
  for (const auto& c : vars.codes()) header.push_back(c);
  for (const char* g : {"state", "county", "tract", "block group"}) header.push_back(g);
  doc.push_back(header);
  auto cell = [](const std::optional<double>& v) -> json {
    if (!v) return "-666666666";
    return format_double(*v);
  };
  for (const auto& r : rows) {
    json a = json::array({cell(r.total_population), cell(r.population_25plus),
                          cell(r.median_household_income), cell(r.bachelors), cell(r.masters),
                          cell(r.professional), cell(r.doctorate)});
    a.push_back(r.geoid.substr(0, 2));
    a.push_back(r.geoid.substr(2, 3));
    a.push_back(r.geoid.substr(5, 6));
    a.push_back(r.geoid.substr(11, 1));
    doc.push_back(std::move(a));
  }
  return doc.dump();
}

SurveyClient::SurveyClient(SurveyClientOptions options) : options_(std::move(options)) {
  if (options_.max_attempts < 1) throw ConfigError("survey max_attempts must be >= 1");
}

int SurveyClient::requests_made() const {
  std::lock_guard<std::mutex> lock(mu_);
  return requests_;
}

std::string SurveyClient::request_path(const std::string& state_fips,
                                       const std::string& county_fips, int year) const {
  const auto scheme_end = options_.endpoint.find("://");
  const auto path_start = options_.endpoint.find('/', scheme_end == std::string::npos ? 0 : scheme_end + 3);
  std::string base = path_start == std::string::npos ? "" : options_.endpoint.substr(path_start);
  std::string get = "NAME";
  for (const auto& c : options_.variables.codes()) get += "," + c;
  std::string path = base + "/" + std::to_string(year) + "/" + options_.dataset + "?get=" + get +
                     "&for=block%20group:*&in=state:" + state_fips + "%20county:" + county_fips;
  if (!options_.api_key.empty()) path += "&key=" + options_.api_key;
  return path;
}

std::string SurveyClient::http_get(const std::string& path_and_query) {
  const auto scheme_end = options_.endpoint.find("://");
  const auto path_start = options_.endpoint.find('/', scheme_end == std::string::npos ? 0 : scheme_end + 3);
  const std::string host = options_.endpoint.substr(0, path_start);
  std::string last_error;
  for (int attempt = 1; attempt <= options_.max_attempts; ++attempt) {
    {
      std::lock_guard<std::mutex> lock(mu_);
      ++requests_;
    }
    httplib::Client client(host);
    client.set_connection_timeout(options_.timeout_s, 0);
    client.set_read_timeout(options_.timeout_s, 0);
    auto res = client.Get(path_and_query);
    if (res) {
      if (res->status == 200) return res->body;
      if (res->status == 204) return "";
      if (res->status < 500) {
        throw InputError("survey API rejected request (HTTP " + std::to_string(res->status) +
                         "): " + res->body.substr(0, 200));
      }
      last_error = "HTTP " + std::to_string(res->status);
    } else {
      last_error = httplib::to_string(res.error());
    }
    spdlog::warn("survey request attempt={} failed error=\"{}\"", attempt, last_error);
    if (attempt < options_.max_attempts) {
      std::this_thread::sleep_for(std::chrono::milliseconds(options_.backoff_ms * attempt));
    }
  }
  throw NetworkError("survey request failed after " + std::to_string(options_.max_attempts) +
                     " attempts: " + last_error);
}

std::vector<SurveyRow> SurveyClient::fetch_uncached(const std::string& state_fips,
                                                    const std::string& county_fips, int year) {
  std::string body;
  std::string source;
  if (options_.fixture) {
    {
      std::lock_guard<std::mutex> lock(mu_);
      ++requests_;
    }
    body = read_file(*options_.fixture);
    source = options_.fixture->string();
  } else {
    body = http_get(request_path(state_fips, county_fips, year));
    source = options_.endpoint;
  }
  if (body.empty()) {
    throw EmptyInputError("no survey rows for state " + state_fips + " county " + county_fips);
  }
  auto rows = parse_survey_response(body, options_.variables, year, source);
  const std::string prefix = state_fips + county_fips;
  std::erase_if(rows, [&](const SurveyRow& r) { return r.geoid.compare(0, 5, prefix) != 0; });
  if (rows.empty()) {
    throw EmptyInputError("no survey rows for state " + state_fips + " county " + county_fips);
  }
  return rows;
}

std::vector<SurveyRow> SurveyClient::fetch(const std::string& state_fips,
                                           const std::string& county_fips, int year) {
  if (state_fips.size() != 2 || county_fips.size() != 3) {
    throw InputError("state FIPS must have 2 digits and county FIPS 3 (got '" + state_fips +
                     "', '" + county_fips + "')");
  }
  if (year < 2009) throw InputError("5-year block-group estimates start in 2009");
  const std::string key = state_fips + county_fips + ":" + std::to_string(year);
  std::shared_future<std::vector<SurveyRow>> fut;
  std::promise<std::vector<SurveyRow>> promise;
  bool owner = false;
  {
    std::lock_guard<std::mutex> lock(mu_);
    auto it = inflight_.find(key);
    if (it == inflight_.end()) {
      fut = promise.get_future().share();
      inflight_.emplace(key, fut);
      owner = true;
    } else {
      fut = it->second;
    }
  }
  if (owner) {
    try {
      promise.set_value(fetch_uncached(state_fips, county_fips, year));
    } catch (...) {
      promise.set_exception(std::current_exception());
      std::lock_guard<std::mutex> lock(mu_);
      inflight_.erase(key);  // failures are not cached
    }
  }
  return fut.get();
}

std::vector<SurveyRow> fetch_survey(const std::string& state_fips, const std::string& county_fips,
                                    int year, const SurveyClientOptions& options) {
  SurveyClient client(options);
  return client.fetch(state_fips, county_fips, year);
}

}  // namespace nbhd::geo
