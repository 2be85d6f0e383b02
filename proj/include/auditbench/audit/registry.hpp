#pragma once

#include <memory>

#include "auditbench/audit/common.hpp"
#include "auditbench/audit/di.hpp"
#include "auditbench/audit/dua.hpp"
#include "auditbench/audit/dvbw.hpp"
#include "auditbench/audit/dw.hpp"
#include "auditbench/audit/mia.hpp"
#include "auditbench/audit/rapid.hpp"
#include "auditbench/audit/ubw.hpp"
#include "auditbench/audit/zeromark.hpp"

namespace auditbench {

inline std::unique_ptr<AuditMethod> make_audit_method(AuditMethodId id) {
  switch (id) {
    case AuditMethodId::mia: return std::make_unique<MiaAudit>();
    case AuditMethodId::rapid: return std::make_unique<RapidAudit>();
    case AuditMethodId::di: return std::make_unique<DiAudit>();
    case AuditMethodId::dua: return std::make_unique<DuaAudit>();
    case AuditMethodId::dvbw: return std::make_unique<DvbwAudit>();
    case AuditMethodId::ubw_p: return std::make_unique<UbwAudit>(false);
    case AuditMethodId::ubw_c: return std::make_unique<UbwAudit>(true);
    case AuditMethodId::zeromark: return std::make_unique<ZeroMarkAudit>();
    case AuditMethodId::dw: return std::make_unique<DwAudit>();
  }
  throw std::invalid_argument("bad method id");
}

inline std::unique_ptr<AuditMethod> make_audit_method(const std::string& name) {
  return make_audit_method(audit_method_from_string(name));
}

inline std::vector<AuditMethodId> all_audit_methods() {
  return {AuditMethodId::mia,   AuditMethodId::rapid,    AuditMethodId::di,
          AuditMethodId::dua,   AuditMethodId::dvbw,     AuditMethodId::ubw_p,
          AuditMethodId::ubw_c, AuditMethodId::zeromark, AuditMethodId::dw};
}

}  // namespace auditbench
