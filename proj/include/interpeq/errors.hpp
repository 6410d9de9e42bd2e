#pragma once

#include <stdexcept>
#include <string>

namespace interpeq {

// Base class for all library errors. Subclasses carry the failure category in
// the type so callers can catch precisely; the message carries provenance.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

#define INTERPEQ_DEFINE_ERROR(NAME)                                  \
    struct NAME : Error {                                            \
        explicit NAME(const std::string& msg) : Error(#NAME ": " + msg) {} \
    }

// causal model construction / solving
INTERPEQ_DEFINE_ERROR(CycleDetected);
INTERPEQ_DEFINE_ERROR(DuplicateTransition);
INTERPEQ_DEFINE_ERROR(MissingTransition);
INTERPEQ_DEFINE_ERROR(UnknownParentId);
INTERPEQ_DEFINE_ERROR(EvaluatorFailure);
INTERPEQ_DEFINE_ERROR(OrderViolation);
INTERPEQ_DEFINE_ERROR(UnknownTarget);
INTERPEQ_DEFINE_ERROR(UnknownVariable);
INTERPEQ_DEFINE_ERROR(UnmappedHighVariable);
INTERPEQ_DEFINE_ERROR(DomainMismatch);

// rasp
INTERPEQ_DEFINE_ERROR(SyntaxError);
INTERPEQ_DEFINE_ERROR(UnknownPrimitive);
INTERPEQ_DEFINE_ERROR(TypeMismatch);
INTERPEQ_DEFINE_ERROR(AlphabetViolation);
INTERPEQ_DEFINE_ERROR(CapacityExceeded);
INTERPEQ_DEFINE_ERROR(UnsupportedOp);

// implementation generation
INTERPEQ_DEFINE_ERROR(EmptyTask);
INTERPEQ_DEFINE_ERROR(TargetIsOutput);
INTERPEQ_DEFINE_ERROR(TargetIsInput);
INTERPEQ_DEFINE_ERROR(BudgetExhausted);
INTERPEQ_DEFINE_ERROR(NoUnimportantComponents);
INTERPEQ_DEFINE_ERROR(GenerationFailure);

// representation similarity
INTERPEQ_DEFINE_ERROR(ShapeMismatch);
INTERPEQ_DEFINE_ERROR(NonChainPooling);

// congruity / metrics
INTERPEQ_DEFINE_ERROR(InsufficientRounds);
INTERPEQ_DEFINE_ERROR(EmptySet);
INTERPEQ_DEFINE_ERROR(InsufficientSamples);
INTERPEQ_DEFINE_ERROR(DomainError);
INTERPEQ_DEFINE_ERROR(MissingTerm);
INTERPEQ_DEFINE_ERROR(AssumptionViolated);

// experiment orchestration
INTERPEQ_DEFINE_ERROR(MissingArtifact);
INTERPEQ_DEFINE_ERROR(ConfigError);

#undef INTERPEQ_DEFINE_ERROR

}  // namespace interpeq
