#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "road/environment.hpp"
#include "road/errors.hpp"

namespace road {

void from_json(const nlohmann::json& j, RetailDb& db) {
  db = RetailDb{};
  for (const auto& u : j.at("users"))
    db.users.push_back({u.at("user_id").get<std::string>(), u.at("given_name").get<std::string>(),
                        u.at("last_name").get<std::string>(), u.at("zip").get<std::string>(),
                        u.at("email").get<std::string>()});
  for (const auto& o : j.at("orders"))
    db.orders.push_back({o.at("order_id").get<std::string>(), o.at("user_id").get<std::string>(),
                         o.at("status").get<std::string>(), o.at("address").get<std::string>(),
                         o.at("items").get<std::vector<std::string>>()});
}

RetailDb load_retail_db(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw NotFound("retail db file not found: " + path.string());
  auto j = nlohmann::json::parse(in, nullptr, false);
  if (j.is_discarded()) throw InvalidArgument("retail db file is not valid JSON: " + path.string());
  RetailDb db;
  try {
    db = j.get<RetailDb>();
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument("bad retail db " + path.string() + ": " + e.what());
  }
  std::set<std::string> ids;
  for (const auto& u : db.users)
    if (!ids.insert(u.user_id).second) throw InvalidArgument("duplicate user_id '" + u.user_id + "'");
  std::set<std::string> orders;
  for (const auto& o : db.orders) {
    if (!orders.insert(o.order_id).second) throw InvalidArgument("duplicate order_id '" + o.order_id + "'");
    if (!ids.contains(o.user_id)) throw InvalidArgument("order " + o.order_id + " names unknown user " + o.user_id);
  }
  return db;
}

ToolRegistry::ToolRegistry(std::vector<ToolSpec> tools) : tools_(std::move(tools)) {
  std::set<std::string> names;
  for (const auto& t : tools_)
    if (!names.insert(t.name).second) throw InvalidArgument("duplicate tool '" + t.name + "'");
}

const ToolSpec* ToolRegistry::find(const std::string& name) const {
  for (const auto& t : tools_)
    if (t.name == name) return &t;
  return nullptr;
}

namespace {

ToolResult fail(std::string why) { return {false, std::move(why)}; }

std::optional<std::string> arg(const ToolArgs& args, const std::string& key) {
  for (const auto& [k, v] : args)
    if (k == key && !v.empty()) return v;
  return std::nullopt;
}

std::string join(const std::vector<std::string>& items) {
  std::string s;
  for (const auto& i : items) s += (s.empty() ? "" : "|") + i;
  return s;
}

std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, '|'))
    if (!item.empty()) out.push_back(item);
  return out;
}

// Runs `body` with the required arguments present, otherwise reports the first missing one.
template <typename Body>
ToolResult with_args(const ToolArgs& args, std::initializer_list<const char*> keys, Body body) {
  std::vector<std::string> values;
  for (const char* k : keys) {
    auto v = arg(args, k);
    if (!v) return fail(std::string("missing argument ") + k);
    values.push_back(*v);
  }
  return body(values);
}

// Order lookup for state-changing tools: the caller must own the order.
RetailOrder* owned_order(RetailState& st, const std::string& order_id, std::string& why) {
  if (!st.authenticated_user) {
    why = "user not authenticated";
    return nullptr;
  }
  for (auto& o : st.db.orders)
    if (o.order_id == order_id) {
      if (o.user_id != *st.authenticated_user) {
        why = "order " + order_id + " does not belong to the authenticated user";
        return nullptr;
      }
      return &o;
    }
  why = "order " + order_id + " not found";
  return nullptr;
}

std::string describe_order(const RetailOrder& o) {
  return "order " + o.order_id + " status=" + o.status + " address=" + o.address + " items=" + join(o.items);
}

}  // namespace

ToolRegistry ToolRegistry::retail() {
  std::vector<ToolSpec> tools;

  tools.push_back({"find_user_id_by_email", {"email"}, false, [](RetailState& st, const ToolArgs& a) {
                     return with_args(a, {"email"}, [&](const std::vector<std::string>& v) {
                       for (const auto& u : st.db.users)
                         if (u.email == v[0]) {
                           st.authenticated_user = u.user_id;
                           return ToolResult{true, u.user_id};
                         }
                       return fail("no user with that email");
                     });
                   }});

  tools.push_back({"find_user_id_by_name_zip", {"given_name", "last_name", "zip"}, false,
                   [](RetailState& st, const ToolArgs& a) {
                     return with_args(a, {"given_name", "last_name", "zip"}, [&](const std::vector<std::string>& v) {
                       for (const auto& u : st.db.users)
                         if (u.given_name == v[0] && u.last_name == v[1] && u.zip == v[2]) {
                           st.authenticated_user = u.user_id;
                           return ToolResult{true, u.user_id};
                         }
                       return fail("no user matches that name and zip");
                     });
                   }});

  tools.push_back({"get_order_details", {"order_id"}, false, [](RetailState& st, const ToolArgs& a) {
                     return with_args(a, {"order_id"}, [&](const std::vector<std::string>& v) {
                       for (const auto& o : st.db.orders)
                         if (o.order_id == v[0]) return ToolResult{true, describe_order(o)};
                       return fail("order " + v[0] + " not found");
                     });
                   }});

  tools.push_back({"cancel_pending_order", {"order_id", "reason"}, true, [](RetailState& st, const ToolArgs& a) {
                     return with_args(a, {"order_id", "reason"}, [&](const std::vector<std::string>& v) {
                       std::string why;
                       auto* o = owned_order(st, v[0], why);
                       if (!o) return fail(why);
                       if (o->status != "pending") return fail("order " + v[0] + " is " + o->status);
                       if (v[1] != "no longer needed" && v[1] != "ordered by mistake")
                         return fail("reason must be 'no longer needed' or 'ordered by mistake'");
                       o->status = "cancelled";
                       return ToolResult{true, describe_order(*o)};
                     });
                   }});

  tools.push_back({"modify_pending_order_address", {"order_id", "address"}, true,
                   [](RetailState& st, const ToolArgs& a) {
                     return with_args(a, {"order_id", "address"}, [&](const std::vector<std::string>& v) {
                       std::string why;
                       auto* o = owned_order(st, v[0], why);
                       if (!o) return fail(why);
                       if (o->status != "pending")
                         return fail("address can only change while the order is pending; order is " + o->status);
                       o->address = v[1];
                       return ToolResult{true, describe_order(*o)};
                     });
                   }});

  tools.push_back({"modify_pending_order_items", {"order_id", "items"}, true, [](RetailState& st, const ToolArgs& a) {
                     return with_args(a, {"order_id", "items"}, [&](const std::vector<std::string>& v) {
                       std::string why;
                       auto* o = owned_order(st, v[0], why);
                       if (!o) return fail(why);
                       if (o->status != "pending") return fail("order " + v[0] + " is " + o->status);
                       auto items = split_list(v[1]);
                       if (items.empty()) return fail("items list is empty");
                       o->items = std::move(items);
                       o->status = "pending_item_modified";
                       return ToolResult{true, describe_order(*o)};
                     });
                   }});

  tools.push_back({"transfer_to_human_agents", {"summary"}, false, [](RetailState&, const ToolArgs& a) {
                     return with_args(a, {"summary"},
                                      [](const std::vector<std::string>&) { return ToolResult{true, "transferred"}; });
                   }});

  return ToolRegistry(std::move(tools));
}

}  // namespace road
