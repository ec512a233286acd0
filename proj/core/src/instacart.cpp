#include "nest/instacart.hpp"

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <unordered_map>

#include "nest/error.hpp"
#include "nest/util.hpp"

namespace nest {

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur.push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(std::move(cur));
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  fields.push_back(std::move(cur));
  return fields;
}

std::size_t require_column(const std::vector<std::string>& header, const std::string& name,
                           const std::string& file) {
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (header[i] == name) return i;
  }
  throw FormatError("instacart: column '" + name + "' missing from " + file);
}

struct OrderInfo {
  std::string user_id;
  long order_number = 0;
  double days_since_prior = 0.0;
  std::vector<std::string> items;
};

}  // namespace

std::vector<RawSubject> ingest_instacart(const std::string& orders_csv,
                                         const std::string& order_products_csv,
                                         double sample_fraction) {
  if (sample_fraction <= 0.0 || sample_fraction > 1.0) {
    throw ConfigError("instacart: sample_fraction must lie in (0, 1]");
  }

  std::ifstream orders_in(orders_csv, std::ios::binary);
  if (!orders_in) throw InputError("instacart: cannot open " + orders_csv);
  std::string line;
  if (!std::getline(orders_in, line)) throw FormatError("instacart: empty orders file");
  auto header = split_csv_line(line);
  const std::size_t col_order = require_column(header, "order_id", orders_csv);
  const std::size_t col_user = require_column(header, "user_id", orders_csv);
  const std::size_t col_number = require_column(header, "order_number", orders_csv);
  const std::size_t col_days = require_column(header, "days_since_prior_order", orders_csv);

  std::unordered_map<std::string, OrderInfo> orders;
  std::unordered_map<std::string, std::vector<std::string>> user_orders;
  const double threshold = sample_fraction * 1e6;
  while (std::getline(orders_in, line)) {
    if (line.empty()) continue;
    auto f = split_csv_line(line);
    if (f.size() <= std::max({col_order, col_user, col_number, col_days})) {
      throw FormatError("instacart: short row in " + orders_csv);
    }
    const std::string& user = f[col_user];
    if (sample_fraction < 1.0 &&
        static_cast<double>(fnv1a64(user) % 1000000ULL) >= threshold) {
      continue;
    }
    OrderInfo info;
    info.user_id = user;
    info.order_number = std::stol(f[col_number]);
    const std::string& days = f[col_days];
    info.days_since_prior = days.empty() || days == "NA" ? 0.0 : std::stod(days);
    user_orders[user].push_back(f[col_order]);
    orders.emplace(f[col_order], std::move(info));
  }

  std::ifstream products_in(order_products_csv, std::ios::binary);
  if (!products_in) throw InputError("instacart: cannot open " + order_products_csv);
  if (!std::getline(products_in, line)) throw FormatError("instacart: empty products file");
  header = split_csv_line(line);
  const std::size_t col_po = require_column(header, "order_id", order_products_csv);
  const std::size_t col_prod = require_column(header, "product_id", order_products_csv);

  std::size_t skipped_sampled_out = 0;
  while (std::getline(products_in, line)) {
    if (line.empty()) continue;
    auto f = split_csv_line(line);
    if (f.size() <= std::max(col_po, col_prod)) {
      throw FormatError("instacart: short row in " + order_products_csv);
    }
    auto it = orders.find(f[col_po]);
    if (it == orders.end()) {
      // Tolerate references to orders of users that were sampled out, but only
      // those: with the full sample every order must resolve.
      if (sample_fraction < 1.0) {
        ++skipped_sampled_out;
        continue;
      }
      throw ConsistencyError("instacart: order_products references unknown order_id " +
                             f[col_po]);
    }
    it->second.items.push_back("product_" + f[col_prod]);
  }
  (void)skipped_sampled_out;

  std::vector<std::string> users;
  users.reserve(user_orders.size());
  for (auto& [user, ids] : user_orders) users.push_back(user);
  std::sort(users.begin(), users.end());

  std::vector<RawSubject> subjects;
  subjects.reserve(users.size());
  for (const auto& user : users) {
    auto& ids = user_orders[user];
    std::sort(ids.begin(), ids.end(), [&](const std::string& a, const std::string& b) {
      return orders.at(a).order_number < orders.at(b).order_number;
    });
    RawSubject subj;
    subj.subject_id = "user_" + user;
    double t = 0.0;
    bool first = true;
    for (const auto& oid : ids) {
      const OrderInfo& info = orders.at(oid);
      t += first ? 0.0 : info.days_since_prior;
      first = false;
      RawSet set;
      set.time = t;
      set.tokens = info.items;
      subj.sets.push_back(std::move(set));
    }
    subjects.push_back(std::move(subj));
  }
  return subjects;
}

}  // namespace nest
