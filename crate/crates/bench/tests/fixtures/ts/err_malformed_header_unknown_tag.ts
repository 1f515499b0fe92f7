@problemName odd
@frequency 12
@classLabel true 0 1
@data
1,2:0
