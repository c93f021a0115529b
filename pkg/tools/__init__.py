from promptopt.judge_protocol import registry
from tools.http_judge import HttpJudge
from tools.mock_judge import MockJudge
from tools.synthetic_judge import SyntheticJudge

registry.register("http", HttpJudge)
registry.register("mock", MockJudge)
registry.register("synthetic", SyntheticJudge)
# EndpointCompressor is not a judge; the pipeline builds it directly
