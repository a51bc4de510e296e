"""Prompt template catalog.

Each template declares which bindings are mandatory and which are optional
(optional ones default to ``None`` so ``{% if x %}`` blocks drop out). Rendering
uses ``StrictUndefined`` so a typo in a template fails loudly.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Mapping

import jinja2


class MissingBindingError(KeyError):
    def __init__(self, template_id: str, name: str):
        super().__init__(f"template {template_id!r}: missing binding {name!r}")
        self.template_id = template_id
        self.name = name

    def __str__(self) -> str:  # KeyError repr-quotes its message otherwise
        return self.args[0]


@dataclass(frozen=True)
class PromptTemplate:
    template_id: str
    body: str
    required: tuple[str, ...]
    optional: tuple[str, ...] = ()
    # verbatim instruction text every rendering must contain
    anchor: str = ""


_ENV = jinja2.Environment(
    undefined=jinja2.StrictUndefined,
    keep_trailing_newline=True,
    autoescape=False,
)


_JSON_QUESTIONS = """
Output a JSON object with:
- "questions": a list of objects, each with:
  - "question": the question text (self-contained and clearly scoped)
  - "destination": either "internet" or "database"
"""

INITIAL_QUESTIONS = """
You are conducting research on a goal/topic: "{{ topic }}". The goal here is to extract previously unknown insights by exploring and observing the information in the database with the following description: {{ db_description }}.

Generate up to {{ num_questions }} questions that an investigator will be interested in. You do not need to generate all {{ num_questions }} questions if you believe you only need to ask 1-2 to get started. The questions will be used to generate search queries in the database to help answer them. The questions should be self-contained (include any specific years, months, locations, etc. instead of a reference that requires the reader to know the context) and related to the goal/topic: "{{ topic }}". Investigate any correlations as you see fit. Do not generate overly complex questions. Each question should be investigate one aspect but do not include too many subquestions inside a single question.

IMPORTANT: the questions should be independent of each other. If you believe some questions need to be answered first, only generate those questions and not others that depend on the answers to the first questions.

{% if article %}
Here is more background information on the goal/topic based on the internet: "{{ article }}".
{% endif %}
""" + _JSON_QUESTIONS

EXPLORATION_QUESTION_DIRECT_GEN = """# instruction

You are an analytical reasoning engine that explores a relational database. Your goal is to discover surprising or meaningful insights. Your task
now is to ask new questions based on the table returned. A list of global insights is provided to you. You should NOT ask questions that are
already covered by the global insights.

Ask 1 - {{ max_questions }} specific questions to further explore relevant topics.
   - Generate 1 to {{ max_questions }} questions.
   - You are NOT required to ask all {{ max_questions }} questions.
   - Make each question self-contained and clearly scoped.
   - Follow a step-by-step process:
     1. Identify the question you are interested in.
     2. For database questions, specify the expected output format, the number of columns, and the names of those columns.
     3. Ensure the question is self-contained and clearly scoped.

For each question, also specify a "destination" to indicate where the question should be routed:
- "database": The question can be answered by querying the database (e.g., aggregations, distributions, trends, filters, correlations, rankings,
or any computation over the data).
- "internet": The question requires external context NOT available in the database (e.g., definitions of domain terms, historical context,
industry benchmarks, comparisons with external data, regulatory background, or general domain knowledge).

Most questions should be "database" - only use "internet" when the answer genuinely cannot come from the database.

Output a JSON object with:
- "chain_of_thought": your reasoning about what aspects to explore
- "questions": a list of objects, each with:
  - "question": the question text (self-contained and clearly scoped)
  - "destination": either "internet" or "database"


# input

Description of database content: {{ db_description }}

Global insights: {{ global_insights }}

Conversation history: {{ dialogue_turns }}

Topic/Question you are writing: {{ topic }}

{% if thesis %}
You are building evidence for the following thesis: "{{ thesis }}"

Research strategy: {{ research_strategy }}

Prioritize questions that help build, test, or refine this argument. You may also ask questions that challenge or qualify the thesis - strong analysis addresses counter-arguments.
{% endif %}
"""

EXPLORATION_DIRECT_SQL_GEN = """# instruction

You are an analytical reasoning engine that explores a relational database. Your goal is to discover surprising or meaningful insights. Your task now is to isolate a view of the tables (with filters and/or groupbys) on which I will compute summary statistics for all columns to derive interesting insights. Generate a total of 1-{{ max_questions }} number of questions. You don't have to generate the maximum number of questions.

In each question:
- You should return a SQL of form: `SELECT * ...` based on filters and groupbys identified in the past round.
- For instance, if in the previous turn you have identified that categroy A has the most amount of population, then in this turn you might want to investiate `SELECT * FROM category = A.` Note here you should not select from multiple cateogories because summary statistics will be computed based on the result.
- First generate your reasoning and then generate the actual SQL.
- The database is {{ database_type }}, so make sure to respect the syntax, such as wrapping tables in double quotes if the table name contains upper case letters.

Output a JSON object with:
- "reasoning": your reasoning
- "queries": a list of SQL strings, each of the form `SELECT * ...`

# input

Description of database content: {{ db_description }}

Conversation history: {{ dialogue_turns }}

Topic/Question you are writing: {{ topic }}
"""

QUERY_CONSISTENCY_MODULE = """
# instruction
You are given a list of SQL responses related to the same topic. Your task is to:
1. identify any inconsistencies in the SQL predicates used and standarize any inconsistencies. For the nodes you would like to correct, issue a follow-up question with the desired SQL predicates. You can directly instruct what to modify in the SQLs. DO NOT instruct new variables not seen in the current SQL. DO NOT instruct it correct any variables.
2. Some noes will be given to you as examples. These examples will be marked with "example_node": True, and you do not need to issue a follow-up question for them.
3. make sure the SQLs reflect the conversation context presented in previous_queries. If any SQL appears to have forgotten the conversational context, issue a follow-up question to resolve it.
4. If no follow-up question is needed, set "follow_up_question": None.

Output a JSON following examples.

# input
{
    "example_node_0": {
        "query": "Show me the top 20 countries by the number of missile or artillery attacks that they have targetted by?",
        "SQL": "SELECT country, COUNT(*) AS attack_count FROM events WHERE sub_event_type IN ('Shelling/artillery/missile attack') GROUP BY country ORDER BY attack_count DESC LIMIT 20;",
        "example_node": True,
        "note": "no need to generate follow_up_question"
    },
    "query0": {
        "previous_queries": None,
        "query": "What specific regions or countries in the Middle East have seen the most significant increase in ISIS-related activities in 2025?",
        "SQL": "SELECT region, country, COUNT(*) AS event_count FROM events WHERE year = 2025 AND region = 'Middle East' AND (actor1 IN ISISactor1 OR actor2 IN ISISactor2 OR assoc_actor_2 IN ISISassoc_actor_2 OR actor1 LIKE '%Islamic State%') GROUP BY region, country ORDER BY event_count DESC;"
    },
    "query1": {
        "previous_queries": None,
        "query": "How have shifts in geopolitical alliances, such as Israel's potential normalization with Saudi Arabia, influenced ISIS activities in the Middle East during 2025?",
        "SQL": "SELECT * FROM event WHERE year = 2025 AND region = 'Middle East' AND (actor1 IN ISISactor1 OR actor2 IN ISISactor2 OR assoc_actor_2 IN ISISassoc_actor_2);"
    }
}
# output
{
    "query0": {
        "query": "What specific regions or countries in the Middle East have seen the most significant increase in ISIS-related activities in 2025?",
        "follow_up_question": None,
    },
    "query1": {
        "query": "How have shifts in geopolitical alliances, such as Israel's potential normalization with Saudi Arabia, influenced ISIS activities in the Middle East during 2025?",
        "follow_up_question": "Please include actor1 LIKE '%Islamic State%' in your SQL predicate."
    }
}

# input
{{ input }}
"""

INSIGHT_BANK_FILTER = """# instruction
You are given a list of insights related to a topic. Your task is to select the most interesting and relevant insights capped at {{ max_num_insights }}.
You should NOT select similar insight twice.

The topic is: {{ topic }}

The database you are using is: {{ db_description }}

{% if thesis %}
## Guiding Thesis
The article being built argues: "{{ thesis }}"

Prioritize insights that are most useful for developing this argument - this includes:
- **Supporting evidence**: findings that directly build or strengthen the thesis
- **Qualifying evidence**: findings that add nuance, scope limits, or important caveats
- **Refuting evidence**: findings that challenge or contradict the thesis - strong analytical articles steel-man
counter-arguments rather than ignore them

Deprioritize insights that are entirely off-topic or redundant with others already selected.
{% endif %}

Output a JSON dict, where each key is a node_id and the value is the insight for that node_id.

# input
{{ input }}
"""

THESIS_GENERATION = """# instruction

You are a senior analyst at a world-class publication (think The Economist, Foreign Affairs, or FiveThirtyEight). You have been given a general
topic and a batch of findings produced by a preliminary data exploration agent.

Your job is NOT to describe what the data shows. Your job is to REASON about what the findings mean - to identify non-obvious patterns, causal
claims, counter-narratives, strategic implications, or surprising tensions - and to distill them into compelling, defensible thesis statements.
Each thesis should be the kind of bold, original argument that could anchor a top-tier analytical article written for a general audience.

Generate at most 3 thesis candidates.

Rules:
- Each thesis is a CONCISE TITLE - maximum 10 words. Think magazine cover line or op-ed headline, NOT a full sentence or a data summary.
- A good thesis takes a POSITION. It argues something. It should be possible to disagree with it. Avoid bland descriptive titles like "Trends in
X" or "Overview of Y."
- Do NOT embed statistics, numbers, or data citations in the thesis title.
- The thesis should capture a non-obvious, thought-provoking argument that would make an informed reader want to read the full article.
- For each thesis, provide a research_strategy: a concrete plan for how a writer should develop this argument into a full analytical article.
Specify what evidence to marshal, what comparisons to draw, what counter-arguments to address, what narrative structure to follow, and what
conclusions to build toward. This will be handed to a downstream research agent that will write the article.
- If the findings in this batch don't support 3 strong theses, output fewer. Quality over quantity.

Output a JSON object with a "theses" array, each item having "thesis" and "research_strategy" fields.

# input

Description of database content: {{ db_description }}

Topic: {{ topic }}

Below are findings from a preliminary data exploration on this topic. Reason about what these findings reveal - the patterns, tensions, and
implications - and propose up to 3 thesis statements that could each serve as the central argument of a top-tier analytical article.

{{ context }}
"""

THESIS_REFINEMENT = """
# instruction

You are a senior analyst at a world-class publication (think The Economist, Foreign Affairs, or FiveThirtyEight).

You previously proposed a working thesis to guide research on a topic. Since then, a research agent has gathered
additional findings from the database. Your task is to re-examine that thesis in light of the new evidence and
decide whether to:

  1. Sharpen - narrow or deepen the original argument using new supporting evidence
  2. Pivot - shift to a better-supported or more compelling argument uncovered by the new findings
  3. Confirm - keep the thesis essentially unchanged if the evidence continues to support it strongly

Output exactly one refined thesis and the updated research strategy.

Output a JSON object with fields "decision" (one of "sharpen", "pivot", "confirm"), "thesis" and "research_strategy".

# input

Description of database content: {{ db_description }}

Topic: {{ topic }}

Current Thesis: {{ current_thesis }}

Current Research strategy: {{ current_research_strategy }}

Current findings:

{{ context }}
"""

OUTLINE_GEN = """
# instruction

You are planning a publication-ready analytical narrative report.
Design a single flowing report that proves the central claim through evidence.
TREE evidence is the core spine; external context should enrich but not replace it.
This is for readers, not a thesis committee.
Rules:
- The thesis is an internal organizing claim, not a standalone section heading.
- Do not plan separate "Thesis" or "Key Findings" sections.
- Use a narrative arc: opening hook -> escalation/mechanism -> geography/human stakes -> implications.
- Each section should advance the story and hand off naturally to the next.
- Every section must still materially support, test, or sharpen the thesis.
- Prefer 4 substantive sections, each capable of roughly 450-700 words.
- For each section, provide at most 3 web queries in web_queries. Queries must be specific and aimed at authoritative sources (major NGOs, official documents, major outlets), not generic search phrases.
Return JSON only with this schema:
{
  "lede_strategy": "...",
  "key_findings": ["...", "..."],
  "sections": [
    {
      "section_id": "S1",
      "heading": "...",
      "purpose": "...",
      "must_include_evidence_ids": [1,2],
      "key_points": ["..."],
      "storytelling_moves": ["..."],
      "web_queries": ["query 1", "query 2"]
    }
  ],
  "closing_strategy": "..."
}


# input
TOPIC:
{{ topic }}

THESIS:
{{ thesis }}

TITLE PACKAGE:
title: {{ title }}
subtitle: {{ subtitle }}
editorial_angle: {{ editorial_angle }}

CORE EVIDENCE NOTES:
{{ note_digest }}

WARMSTART CONTEXT (optional background hints):
{{ warmstart_text }}

VALID EVIDENCE IDS (must_include_evidence_ids must use only these):
{{ valid_ids }}

Create the report plan now.
"""

_SECTION_INPUT = """# input
TOPIC:
{{ topic }}

THESIS:
{{ thesis }}

REPORT TITLE:
{{ report_title }}

SECTION SPEC:
- section_id: {{ section_id }}
- heading: {{ heading }}
- purpose: {{ purpose }}
- key_points: {{ key_points }}
- storytelling_moves: {{ storytelling_moves }}

ALLOWED_CITATIONS:
{{ allowed }}

CORE TREE EVIDENCE (mandatory):
{{ core_packet }}

SUPPLEMENTAL WEB CONTEXT (optional):
{{ web_packet }}
"""

SECTION_DRAFT = """# instruction
You are writing one section of a publication-ready analytical narrative report. Think of medias such as New York Times or the Economist.
Rules:
- TREE evidence is the core spine: prioritize it and explicitly use it.
- Supplemental web context can provide background, reactions, and scene-setting.
- Every factual claim must have inline citation(s) in [N] format.
- Use only citation numbers from ALLOWED_CITATIONS.
- Do not invent citations or facts.
- Do not repeat the section heading inside section_markdown.
- Do not open with phrases like "This section" or "This evidence". Lead with the most consequential finding.
- Move from data -> mechanism -> human stakes -> repercussions.
- Quant style: write numbers like a reporter with evidence, not a methods appendix.
  - Avoid in-line statistical jargon (e.g., "mean", "std", "p-value", "significant", "contemporaneous", "lagging", "correlation
coefficient", "r=") unless the coefficient itself is the only faithful representation of the evidence.
  - Prefer plain-language comparatives first ("about twice as high", "tracked closely", "rose sharply"), then give the exact
numbers in a second clause or sentence.
  - If you include r/lag/etc., translate immediately in plain language and avoid stacking multiple coefficients in one sentence.
  - Prefer one numeric claim per sentence; avoid dense parenthetical math.
  - Avoid meta signposting like "as later sections will detail"; use a natural bridge sentence instead.
- For each evidence citation provided, include at least one substantive use tied to that citation.
- If the web packet contains clearly relevant authoritative sources, use at least 1-2 web citations for context or external
validation. Do not force weak web sources.
- Prefer smooth prose over bullets or mini-subheadings; use internal subheadings only if truly necessary.
- End with a forward-driving sentence that naturally sets up the next section.
- Do not add any Sources/References/Citations section.
Return JSON only:
{
  "section_id": "...",
  "heading": "...",
  "section_markdown": "...",
  "used_citations": [1,2,3]
}

""" + _SECTION_INPUT + """
TARGET SECTION LENGTH:
{{ target_words }} words (hard ceiling - stay under this)

Draft this section now. Keep it highly analytical, readable, and citation-grounded.
"""

CITATION_GROUNDING = """
You are a precise fact-checker for data journalism reports.

You will be given a SENTENCE taken from a report and the SOURCE text that the sentence cites. Your job is to determine whether every factual claim in the
SENTENCE is supported (entailed) by the SOURCE. You will be given the context leading up to the citation.

Rules:
- Set is_entailed to true only if every factual claim in the SENTENCE can be directly verified from the SOURCE. Minor rephrasing or summarisation is fine
as long as nothing contains factual errors. For instance, fatality vs. incident count would be a factual difference.
- Set is_entailed to false if the SENTENCE adds, omits, or distorts any fact relative to the SOURCE.
- If is_entailed is false, concisely identify the issue in your output (one sentence).

DO NOT flag:
- Reasonable interpretations or paraphrases of the evidence
- Stylistic differences or summarization

Output a JSON object with fields "is_entailed" (true or false) and "issue" (one sentence, empty when entailed).

# input
{% if context %}
CONTEXT:
{{ context }}
{% endif %}

SENTENCE:
{{ sentence }}

SOURCE:
{{ sources }}
"""

SECTION_REVISION = """
# instruction
You are revising one section of a publication-ready analytical narrative report.

You will be given the previous draft and a list of criticisms. Each criticism identifies a specific sentence that
makes a claim not supported by the cited evidence.

Rules:
- Fix ONLY the criticized sentences. Do not rewrite or restructure anything else.
- For each criticism, either:
  a) Rewrite the sentence to remove or qualify the unsupported claim, keeping any supported parts intact, or
  b) Remove the sentence entirely if no part of it is supportable.
- Keep all citations that remain accurate. Do not add new citations outside ALLOWED_CITATIONS.
- Do not invent new facts.
- Preserve the section's structure, flow, and all uncriticized content verbatim.
- Do not add a Sources/References/Citations section.

Return JSON only:
{
  "section_id": "...",
  "heading": "...",
  "section_markdown": "...",
  "used_citations": [1,2,3]
}

""" + _SECTION_INPUT + """
PREVIOUS DRAFT:
{{ previous_draft }}

CRITICISMS:
{{ criticisms }}

Revise the section now. Change only what the criticisms require.
"""

FINAL_POLISH = """

# instruction
You are a senior editor polishing a near-final publication-ready report draft. Think of medias such as New York Times or the Economist.
Rules:
- Preserve and improve analytical flow, and add smooth transitions between sections.
- Preserve or expand substance; do not compress the draft into a summary.
- Keep all existing valid citations; do not invent new citation numbers.
- Use only citation numbers listed in ALLOWED_CITATIONS.
- Keep markdown headings and publication-ready prose.
- Do NOT add Sources/References/Citations section (it will be appended programmatically).
- The final polished report body must not exceed {{ target_total_words }} words (excluding the sources appendix). Cut ruthlessly for concision while preserving every cited claim.
- You should include a conclusion section at the end.
- Do not explictly include a "thesis" block
Return JSON only:
{
  "report_markdown": "..."
}

# input
TOPIC:
{{ topic }}

THESIS:
{{ thesis }}

TITLE:
{{ title }}
{{ subtitle }}

PLAN (for structural intent):
{{ plan_json }}

ALLOWED_CITATIONS:
{{ allowed_citations }}

DRAFT REPORT:
{{ draft_markdown }}
"""

CRITERIA_MATCHING_GEN = """
# instruction

You are an expert analyst. Given a reference research article, extract a list of evaluation criteria describing
what analytical points a good report on this topic should cover. Focus on general trends and patterns - do not
reference specific numbers, dates, or proper nouns that would make the criteria too narrow.

Read the reference article carefully. Identify the key analytical points it makes - the insights, trends, and
conclusions that a thorough report on this topic should include.

For each criterion:
1. Give it a short **name** (3-6 words)
2. Write a **description** of the general trend or pattern to look for (1-2 sentences, no specific numbers or
dates needed but include e.g. the general trend)

Return as a JSON object with a "criteria" array, each item having "name" and "description" fields.

# input

## Research Task
{{ task_prompt }}

## Reference Article
{{ reference_article }}
"""

CRITERIA_MATCHING_GRADE = """# instruction

You are an expert evaluator of analytical research articles. Given a set of evaluation criteria and a generated
article, grade how well the article addresses each criterion.

For each criterion, assess how well the generated article addresses it on a 0.0-1.0 scale:
- **1.0** - Fully addresses: the article clearly covers this analytical point
- **0.75** - Mostly addresses: covered but with gaps or insufficient depth
- **0.5** - Partially addresses: touches on it but misses key aspects
- **0.25** - Barely addresses: only a brief or tangential mention
- **0.0** - Not addressed: completely absent from the article

Return as a JSON object with fields: criterion_scores (array of {name, score, explanation}).

# input

{% if score_reminder %}
{{ score_reminder }}
{% endif %}
## Research Task
{{ task_prompt }}

## Evaluation Criteria
{{ criteria }}

## Generated Article
{{ generated_article }}
"""

ATOMIC_BREAKDOWN = """Given an input article, your task is to break down the insights in the article into itemized points. Each insight should be self-contained.

Output a JSON object with a "claims" array of strings.

Input article: {{ article }}
"""

INSIGHT_ATTRIBUTION = """You are an expert analyst evaluating whether a piece of evidence from a generated article is derived from ACLED (Armed Conflict
Location & Event Data) data.

Article topic: {{ article_topic }}

Evidence to classify: {{ evidence }}

ACLED data includes:
- Conflict event counts, incident reports, and event descriptions
- Violence against civilians statistics
- Battle-related data (battles, explosions/remote violence, riots, protests)
- Fatality counts and casualty figures from conflict events
- Geographic conflict data (locations of events, subnational breakdowns)
- Conflict trend analysis and temporal patterns derived from event data
- Armed group activity and actor-level data
- Conflict index scores (e.g., ACLED Conflict Index)
- Data explicitly attributed to ACLED or its datasets

NOT ACLED data:
- General geopolitical analysis or commentary not tied to specific event data
- Economic indicators (GDP, inflation, trade figures)
- Humanitarian statistics from UN agencies (UNHCR refugee counts, OCHA displacement figures) unless explicitly tied to ACLED
- Demographic or census data
- Policy statements, diplomatic actions, or government declarations
- Media reports or journalistic analysis without specific conflict event data
- Academic or think-tank analysis not grounded in ACLED event data
- Data from other conflict databases (e.g., UCDP, GTD, IISS) unless attributed to ACLED

Output a JSON object with a field "attribution" set to "database" if the evidence is derived from ACLED data, otherwise "internet".
"""

INSIGHTBENCH_EVAL = """Below is an instruction that describes a task. Write a response that appropriately completes the request.

### Instruction:
Provided Answer:
{{ answer }}

Ground Truth Answer:
{{ gt_answer }}

Follow these instructions when writing your response:
* On a scale of 1-10, provide a numerical rating for how close the provided answer is to the ground truth answer, with 10 denoting that the provided answer is the same as ground truth answer.
* Your response should contain only the numerical rating. DONOT include anything else like the provided answer, the ground truth answer, or an explanation of your rating scale in your response.
* Wrap your numerical rating inside <rating></rating> tags.
* Check very carefully before answering.
* Follow the output format as shown in the example below:
Example response:
<rating>7</rating>

### Response:
"""

EXECUTOR_MAIN = """
# instruction
Your task is to write a **{{ database_type }}** query to answer the given question. Follow a step-by-step process:

- User question is contextual. If needed, the current date is {{ curr_date }}
- Start by constructing simple fragments of the **{{ database_type }}** query.
- Execute each fragment to verify its correctness. Adjust as needed based on your the observations.
- Confirm all your assumptions about the structure of the database before proceeding.
- Do NOT repeat the same action, as the results will be the same.
- You will always be shown with a sample of database results. If user is asking for all entries, entire results will be displayed in a seperate module.
- Output one final SQL at the end that contains all results. You can only output one SQL query (not multiple ";" separated queries).
- For stats/visualizations, you should call the execute_python_from_sql action AFTER you have determined the final SQL query.
- Only the latest plot will be shown to you.

Form exactly one "Thought" and perform exactly one "Action", then wait for the "Observation".

Possible actions are:

- get_tables(): Retrieves all the tables with a corresponding short description. **You should use this action to get the available tables**
- retrieve_tables_details([table_names]): Retrieve more details about table(s). The argument should be a list of table names as strigns. // Example: retrieve_tables_details(["table1"]) or retrieve_tables_details(["table1", "table2"])
- execute_sql(sql): Runs a SQL query and returns results.
- execute_python_from_sql(sql, python_code): Executes a Python code based on the results of the SQL query. The argument should be a Python tuple containing the SQL query and the Python code. Your python code can reference the results of the SQL query using the `sql_results` variable, which will be passed in as a pandas dataframe. The two codes should be wrapped in string quotes(") // Example: execute_python_from_sql("SELECT * FROM table1", "print(sql_results)")
- stop(): Marks the last executed SQL query as the final answer and ends the process. You can directly use this if user is not engaged in database-related conversation but instead just chit-chatting.

# input
Prior turn contexts:
--
{% for turn in conversation_history or [] %}
User Question: {{ turn["question"] }}

Action history:
{% for action in turn["action_history"] %}
{{ action }}
{% endfor %}

Agent Response: {{ turn["response"] }}
--
{% endfor %}
Current-turn User Question: {{ question }}

{% if action_history %}
Action history:
{% for action in action_history %}

{{ action }}
{% endfor %}
{% endif %}

Output one "Thought" and one "Action":
"""

SUMMARY_PROMPT = """You are given a list of data insights derived from a dataset analysis.
Write a concise, coherent paragraph (3-5 sentences) that summarizes the key findings.
Focus on the most important patterns and avoid repetition.

Insights:
{{ insights }}
"""

# Templates below have no published wording; they are minimal glue prompts.

WARMSTART_QUERIES = """You are preparing background internet research on the topic: "{{ topic }}".
Propose between 3 and 8 specific web search queries that together give broad topical coverage and surface promising directions for later database analysis.

Output a JSON object with a "queries" array of strings.
"""

WARMSTART_REPORT = """You are writing a preliminary background report on the topic: "{{ topic }}".
Use only the search results below. Write a short markdown report with at least two "## " sections, then list between 5 and 15 standalone insights drawn from the results.

Output a JSON object with fields "report_markdown" (string) and "insights" (array of strings).

# search results
{{ results }}
"""

INTERNET_ANSWER = """Answer the question using only the search results below. Be concise (at most 4 sentences) and state facts plainly. If the results do not answer the question, say so.

Output a JSON object with a field "answer".

Question: {{ question }}

Topic: {{ topic }}

# search results
{{ results }}
"""

TITLE_PACKAGE = """You are an editor naming an analytical report.

Topic: {{ topic }}
Thesis: {{ thesis }}

Key findings:
{{ note_digest }}

Output a JSON object with fields "title", "subtitle" and "editorial_angle".
"""


def _t(template_id: str, body: str, required, optional=(), anchor: str = "") -> PromptTemplate:
    return PromptTemplate(template_id, body, tuple(required), tuple(optional), anchor)


TEMPLATES: dict[str, PromptTemplate] = {
    t.template_id: t
    for t in [
        _t("initial_questions", INITIAL_QUESTIONS, ["topic", "db_description", "num_questions"],
           ["article"], "IMPORTANT: the questions should be independent of each other."),
        _t("exploration_question_direct_gen", EXPLORATION_QUESTION_DIRECT_GEN,
           ["max_questions", "db_description", "global_insights", "dialogue_turns", "topic"],
           ["thesis", "research_strategy"],
           "You should NOT ask questions that are\nalready covered by the global insights."),
        _t("exploration_direct_SQL_gen", EXPLORATION_DIRECT_SQL_GEN,
           ["max_questions", "db_description", "dialogue_turns", "topic", "database_type"], (),
           "You should return a SQL of form: `SELECT * ...`"),
        _t("query_consistency_module", QUERY_CONSISTENCY_MODULE, ["input"], (),
           "DO NOT instruct new variables not seen in the current SQL."),
        _t("insight_bank_filter", INSIGHT_BANK_FILTER,
           ["max_num_insights", "topic", "db_description", "input"], ["thesis"],
           "You should NOT select similar insight twice."),
        _t("thesis_generation", THESIS_GENERATION, ["db_description", "topic", "context"], (),
           "Generate at most 3 thesis candidates."),
        _t("thesis_refinement", THESIS_REFINEMENT,
           ["db_description", "topic", "current_thesis", "current_research_strategy", "context"], (),
           "Output exactly one refined thesis and the updated research strategy."),
        _t("outline_gen", OUTLINE_GEN,
           ["topic", "thesis", "title", "subtitle", "editorial_angle", "note_digest",
            "warmstart_text", "valid_ids"], (),
           "Prefer 4 substantive sections, each capable of roughly 450-700 words."),
        _t("section_draft", SECTION_DRAFT,
           ["topic", "thesis", "report_title", "section_id", "heading", "purpose", "key_points",
            "storytelling_moves", "allowed", "core_packet", "web_packet", "target_words"], (),
           "Every factual claim must have inline citation(s) in [N] format."),
        _t("citation_grounding", CITATION_GROUNDING, ["sentence", "sources"], ["context"],
           "You are a precise fact-checker for data journalism reports."),
        _t("section_revision", SECTION_REVISION,
           ["topic", "thesis", "report_title", "section_id", "heading", "purpose", "key_points",
            "storytelling_moves", "allowed", "core_packet", "web_packet", "previous_draft",
            "criticisms"], (),
           "Fix ONLY the criticized sentences. Do not rewrite or restructure anything else."),
        _t("final_polish", FINAL_POLISH,
           ["target_total_words", "topic", "thesis", "title", "subtitle", "plan_json",
            "allowed_citations", "draft_markdown"], (),
           "You should include a conclusion section at the end."),
        _t("criteria_matching_gen", CRITERIA_MATCHING_GEN, ["task_prompt", "reference_article"], (),
           "1. Give it a short **name** (3-6 words)"),
        _t("criteria_matching_grade", CRITERIA_MATCHING_GRADE,
           ["task_prompt", "criteria", "generated_article"], ["score_reminder"],
           "- **0.25** - Barely addresses: only a brief or tangential mention"),
        _t("atomic_breakdown", ATOMIC_BREAKDOWN, ["article"], (),
           "break down the insights in the article into itemized points"),
        _t("insight_attribution", INSIGHT_ATTRIBUTION, ["article_topic", "evidence"], (),
           "NOT ACLED data:"),
        _t("insightbench_eval", INSIGHTBENCH_EVAL, ["answer", "gt_answer"], (),
           "* Wrap your numerical rating inside <rating></rating> tags."),
        _t("executor_main", EXECUTOR_MAIN,
           ["database_type", "curr_date", "question"], ["conversation_history", "action_history"],
           'Form exactly one "Thought" and perform exactly one "Action", then wait for the "Observation".'),
        _t("summary_prompt", SUMMARY_PROMPT, ["insights"], (),
           "Write a concise, coherent paragraph (3-5 sentences) that summarizes the key findings."),
        _t("warmstart_queries", WARMSTART_QUERIES, ["topic"], (),
           "Propose between 3 and 8 specific web search queries"),
        _t("warmstart_report", WARMSTART_REPORT, ["topic", "results"], (),
           "at least two \"## \" sections"),
        _t("internet_answer", INTERNET_ANSWER, ["question", "topic", "results"], (),
           "Answer the question using only the search results below."),
        _t("title_package", TITLE_PACKAGE, ["topic", "thesis", "note_digest"], (),
           "You are an editor naming an analytical report."),
    ]
}

_COMPILED: dict[str, jinja2.Template] = {}


def render(template_id: str, bindings: Mapping[str, Any]) -> str:
    """Render a catalog template; raises MissingBindingError for absent mandatory names."""
    try:
        template = TEMPLATES[template_id]
    except KeyError:
        raise KeyError(f"unknown template {template_id!r}") from None
    for name in template.required:
        if name not in bindings or bindings[name] is None:
            raise MissingBindingError(template_id, name)
    values = {name: None for name in template.optional}
    values.update(bindings)
    values.setdefault("conversation_history", [])
    compiled = _COMPILED.get(template_id)
    if compiled is None:
        compiled = _COMPILED[template_id] = _ENV.from_string(template.body)
    try:
        return compiled.render(**values)
    except jinja2.UndefinedError as exc:  # pragma: no cover - catalog bug
        raise MissingBindingError(template_id, str(exc)) from None
