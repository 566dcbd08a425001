"""
RV64IMC 用户态模拟器、确定性内核模型和拦截运行时
"""
