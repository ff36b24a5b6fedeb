#include "cen/bus.hpp"

namespace cen {

void Directory::add(DirectoryEntry entry) {
    auto id = entry.id;
    entries_.insert_or_assign(std::move(id), std::move(entry));
}

const DirectoryEntry* Directory::find(std::string_view id) const {
    auto it = entries_.find(std::string(id));
    return it == entries_.end() ? nullptr : &it->second;
}

KeyLookup Directory::key_lookup() const {
    return [this](std::string_view id) -> std::optional<Bytes> {
        const DirectoryEntry* entry = find(id);
        if (entry == nullptr) return std::nullopt;
        return entry->public_key;
    };
}

Value Directory::keys_value() const {
    Value::Map keys;
    for (const auto& [id, entry] : entries_) {
        keys.insert_or_assign(id, Value::map({
                                      {"kind", entry.kind},
                                      {"public_key", entry.public_key},
                                  }));
    }
    return Value::map({{"participants", Value(std::move(keys))}});
}

bool MessagePattern::matches(std::string_view from, std::string_view to,
                             std::string_view payload_kind) const {
    if (from_node && *from_node != from) return false;
    if (to_node && *to_node != to) return false;
    if (kind && *kind != payload_kind) return false;
    return true;
}

void Node::deliver(const BusMessage& message, const Value& body, NodeContext& ctx) {
    if (!seen_.insert(message.msg_id).second) {
        return;  // duplicate delivery, already processed
    }
    on_message(body, message, ctx);
}

void Node::on_timer(std::string_view, NodeContext&) {}

}  // namespace cen
