#include <gtest/gtest.h>

#include <string>

#include "retune/formats.hpp"
#include "retune/parser.hpp"

using namespace retune;

TEST(FindUnexecutedCall, PendingAdditionCall) {
  const auto call = find_unexecuted_call("687 + 891\nSolution: Call: 87 + 91\n");
  ASSERT_TRUE(call);
  EXPECT_EQ(call->call_text, "87 + 91");
  EXPECT_EQ(call->span, (Span{20, 34}));
  EXPECT_FALSE(call->executed);
}

TEST(FindUnexecutedCall, ExecutedCallIsNotPending) {
  EXPECT_FALSE(find_unexecuted_call("687 + 891\nSolution: Call: 87 + 91\nReturn: Carry 1, Output 78\nAnswer: Carry 1, Output 578"));
}

TEST(FindUnexecutedCall, DynProgSecondCall) {
  const std::string ctx =
      "Compute the maximum sum of nonadjacent subsequences of [1, -3, 2]\nSolution: Call: Create dp array [1, -3, 2]\n"
      "Return: [3, 2, 2]\nCall: Create chosen indices array: sum array [3, 2, 2], item array [1, -3, 2], can use item True\n";
  const auto call = find_unexecuted_call(ctx);
  ASSERT_TRUE(call);
  EXPECT_EQ(call->call_text, "Create chosen indices array: sum array [3, 2, 2], item array [1, -3, 2], can use item True");
  const auto sites = scan_calls(ctx);
  ASSERT_EQ(sites.size(), 2u);
  EXPECT_TRUE(sites[0].executed);
  EXPECT_EQ(*sites[0].return_text, "[3, 2, 2]");
}

TEST(FindUnexecutedCall, UnterminatedCallIsNotACallYet) {
  EXPECT_FALSE(find_unexecuted_call("687 + 891\nSolution: Call: 87 + 9"));
  EXPECT_TRUE(has_unterminated_call("687 + 891\nSolution: Call: 87 + 9"));
  EXPECT_FALSE(has_unterminated_call("687 + 891\nSolution: "));
}

TEST(FindUnexecutedCall, CallAfterIndicesPreamble) {
  const std::string ctx = "Create chosen indices array: sum array [2, 2], item array [-3, 2], can use item False\nSolution: " +
                          std::string(kDpIndicesPreamble) +
                          "Call: Create chosen indices array: sum array [2], item array [2], can use item True\n";
  const auto call = find_unexecuted_call(ctx);
  ASSERT_TRUE(call);
  EXPECT_EQ(call->call_text, "Create chosen indices array: sum array [2], item array [2], can use item True");
}

TEST(StrayCalls, MidProseMarkerIsFlaggedNotExecuted) {
  const std::string ctx = "1 + 2\nSolution: I will Call: 3 + 4\n";
  EXPECT_FALSE(find_unexecuted_call(ctx));
  const auto stray = find_stray_calls(ctx);
  ASSERT_EQ(stray.size(), 1u);
  EXPECT_EQ(ctx.substr(stray[0], 6), "Call: ");
}

TEST(SpliceReturn, AdditionAnswerFollows) {
  const std::string out = splice_return("687 + 891\nSolution: Call: 87 + 91\n", "Carry 1, Output 78");
  EXPECT_EQ(out, "687 + 891\nSolution: Call: 87 + 91\nReturn: Carry 1, Output 78\nAnswer: ");
  EXPECT_FALSE(find_unexecuted_call(out));
}

TEST(SpliceReturn, Parity) {
  const std::string out = splice_return("What is the parity of [1, 0, 1]?\nSolution: Call: What is the parity of [0, 1]?\n", "1");
  EXPECT_EQ(out, "What is the parity of [1, 0, 1]?\nSolution: Call: What is the parity of [0, 1]?\nReturn: 1\nAnswer: ");
}

TEST(SpliceReturn, ContinuationSuffix) {
  const std::string out = splice_return("x\nSolution: Call: Create dp array [1, 2, 3]\n", "[4, 3, 3]", kContinueSuffix);
  EXPECT_EQ(out, "x\nSolution: Call: Create dp array [1, 2, 3]\nReturn: [4, 3, 3]\n");
}

TEST(SpliceReturn, Errors) {
  EXPECT_THROW(splice_return("687 + 891\nSolution: ", "x"), ContractViolation);
  EXPECT_THROW(splice_return("687 + 891\nSolution: Call: 87 + 91\n", ""), InputError);
  EXPECT_THROW(splice_return("687 + 891\nSolution: Call: 87 + 91\n", "a\nb"), InputError);
  EXPECT_THROW(splice_return("687 + 891\nSolution: Call: 87 + 91\ntrailing", "x"), ContractViolation);
}

TEST(SpliceReturn, MonotoneAcrossSplices) {
  std::string ctx = "Compute the maximum sum of nonadjacent subsequences of [1, -3, 2]\nSolution: Call: Create dp array [1, -3, 2]\n";
  ctx = splice_return(ctx, "[3, 2, 2]", kContinueSuffix);
  const auto first = scan_calls(ctx);
  ctx += "Call: Create chosen indices array: sum array [3, 2, 2], item array [1, -3, 2], can use item True\n";
  ctx = splice_return(ctx, "[1, 2, 1]");
  const auto sites = scan_calls(ctx);
  ASSERT_EQ(sites.size(), 2u);
  EXPECT_TRUE(sites[0].executed);
  EXPECT_TRUE(sites[1].executed);
  EXPECT_EQ(sites[0].span, first[0].span);
}

TEST(ScanCalls, SpansReserializeExactly) {
  const std::string ctx = "687 + 891\nSolution: Call: 87 + 91\nReturn: Carry 1, Output 78\nAnswer: Carry 1, Output 578";
  for (const auto& site : scan_calls(ctx))
    EXPECT_EQ(ctx.substr(site.span.start, site.span.end - site.span.start), "Call: " + site.call_text + "\n");
}

TEST(ExtractAnswerText, Examples) {
  EXPECT_EQ(extract_answer_text("637 + 123\nSolution: Call: 37 + 23\nReturn: Carry 0, Output 60\nAnswer: Carry 0, Output 760"),
            "Carry 0, Output 760");
  EXPECT_EQ(extract_answer_text("...\nAnswer: [1, 2, 1]"), "[1, 2, 1]");
  EXPECT_EQ(extract_answer_text("Answer: 1  \n"), "1");
  EXPECT_THROW(extract_answer_text("no marker here"), ExtractionError);
  EXPECT_THROW(extract_answer_text("x\nAnswer: "), ExtractionError);
}
